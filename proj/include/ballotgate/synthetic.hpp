#pragma once

// Procedural stand-ins for camera frames and scanner images. Everything is
// driven by explicit seeds so datasets are reproducible bit for bit.

#include "ballotgate/detector.hpp"
#include "ballotgate/facerec.hpp"
#include "ballotgate/imaging.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace ballotgate::synth {

/// Geometry and shading that make one synthetic person recognisable.
struct FaceIdentity {
  double face_rx, face_ry;
  double skin, background, hair;
  double hairline;
  double eye_y, eye_dx, eye_rx, eye_ry, eye_dark;
  double brow_gap, brow_thick, brow_len, brow_tilt, brow_dark;
  double nose_len, nose_w, nose_dark;
  double mouth_y, mouth_w, mouth_h, mouth_dark, mouth_curve;
  double mark_x, mark_y, mark_r, mark_dark;
};

FaceIdentity make_face_identity(std::uint64_t seed);

/// Per-capture variation: placement, exposure and sensor noise.
struct Capture {
  double dx = 0.0, dy = 0.0;    // fraction of the frame
  double scale = 1.0;
  double gain = 1.0, offset = 0.0;
  double gradient = 0.0;        // left-to-right illumination ramp in grey levels
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

Capture random_capture(std::uint64_t seed, double strength = 1.0);

/// Renders the face so it fills a side x side frame.
GrayImage render_face(const FaceIdentity& id, int side, const Capture& cap = {});

/// Places a face of `face_side` pixels at (x, y) inside a textured background.
GrayImage face_in_scene(const FaceIdentity& id, int width, int height, Rect face_box,
                        std::uint64_t background_seed);

/// Random non-face texture (noise, blobs, stripes, gradients or flat fill).
GrayImage render_clutter(int side, std::uint64_t seed);

struct WindowSet {
  std::vector<GrayImage> windows;  // normalized side x side
  std::vector<SampleLabel> labels;
};

/// Faces of distinct identities and assorted clutter, normalized the same way
/// the detector normalizes its scan windows. Flat patches are always present
/// among the non-faces.
WindowSet detector_training_set(int faces, int nonfaces, std::uint64_t seed, int side = 24);

/// Fingerprint as a smooth ridge-orientation field with phase singularities
/// injected at `minutia_count` random places (each spawns a ridge ending or
/// bifurcation).
struct FingerIdentity {
  double period;
  double angle;          // dominant ridge orientation, radians
  double wave_amp, wave_freq, wave_phase;
  double curl;           // slow orientation change across the print
  std::vector<std::pair<double, double>> singularities;  // pixel coords
  std::vector<int> charges;                              // +1 / -1
};

FingerIdentity make_finger_identity(std::uint64_t seed, int width = 160, int height = 160,
                                    int minutia_count = 10);

struct ScanVariation {
  int dx = 0, dy = 0;  // integer translation in pixels
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};

GrayImage render_fingerprint(const FingerIdentity& id, int width = 160, int height = 160,
                             const ScanVariation& scan = {});

/// Copy of `id` with roughly `fraction` of its singularities moved more than
/// `min_shift` pixels.
FingerIdentity perturb_finger(const FingerIdentity& id, double fraction, double min_shift,
                              std::uint64_t seed, int width = 160, int height = 160);

/// Writes `<root>/<identity>/<nn>.pgm` plus `<root>/split.txt`, the first
/// `enroll_per_identity` images of each identity marked "enroll", the rest
/// "probe".
void write_face_dataset(const std::filesystem::path& root, int identities, int per_identity,
                        int enroll_per_identity, int side, std::uint64_t seed,
                        double capture_strength = 1.0);

void write_fingerprint_dataset(const std::filesystem::path& root, int identities,
                               int per_identity, int enroll_per_identity,
                               std::uint64_t seed);

/// One synthetic voter: a face crop and a thumb scan. Capture 0 is the clean
/// enrollment capture; later captures add the mild jitter of a desk setup.
struct Person {
  GrayImage face;
  GrayImage finger;
};

Person make_person(std::uint64_t seed, int capture = 0, int face_side = 42);

/// Eigen model fitted on `identities` faces that are disjoint from the seeds
/// make_person uses in tests (seeds below 10000).
EigenModel reference_face_model(int identities = 40, int side = 42, int components = 40);

} // namespace ballotgate::synth
