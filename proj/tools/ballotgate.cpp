// ballotgate: operator CLI for enrollment, voting, the HTTP service and the
// evaluation harness. Exit codes: 0 success, 1 rejection, 2 usage error.

#include "ballotgate/detector.hpp"
#include "ballotgate/election.hpp"
#include "ballotgate/error.hpp"
#include "ballotgate/evaluation.hpp"
#include "ballotgate/gateway.hpp"
#include "ballotgate/image_io.hpp"
#include "ballotgate/synthetic.hpp"

#include "CLI11.hpp"

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace ballotgate;
namespace fs = std::filesystem;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_rejected = 1;
constexpr int exit_usage = 2;

struct Rejected : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string store;
  std::string ballot;
  std::string model;
  std::string audit;

  ApiConfig load() const {
    ApiConfig c = config.empty() ? ApiConfig{} : load_config(config);
    if (!store.empty()) c.registry_path = store;
    if (!ballot.empty()) c.ballot_path = ballot;
    if (!model.empty()) c.model_path = model;
    if (!audit.empty()) c.audit_path = audit;
    return c;
  }
};

void add_common(CLI::App* cmd, Common& common, bool with_ballot) {
  cmd->add_option("--config", common.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--store", common.store, "registry store (JSON lines)");
  cmd->add_option("--model", common.model, "eigenface model JSON");
  if (with_ballot) {
    cmd->add_option("--ballot", common.ballot, "ballot definition JSON");
    cmd->add_option("--audit", common.audit, "audit log (JSON lines)");
  }
}

// Read-only commands do not need the secret; any non-empty key opens the store.
Key key_or_placeholder() {
  try {
    return key_from_env();
  } catch (const Error&) {
    return Key{0};
  }
}

std::unique_ptr<Registry> open_registry(const ApiConfig& cfg, Key key) {
  auto model = std::make_shared<const EigenModel>(load_model(cfg.model_path));
  std::shared_ptr<const Cascade> detector;
  if (!cfg.cascade_path.empty()) detector = std::make_shared<const Cascade>(load_cascade(cfg.cascade_path));
  auto reg = std::make_unique<Registry>(model, std::move(key), cfg.registry_config(), detector);
  if (fs::exists(cfg.registry_path)) reg->load(cfg.registry_path);
  return reg;
}

std::vector<int> parse_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CLI::ValidationError("list", "not an integer: '" + item + "'");
    }
  }
  if (out.empty()) throw CLI::ValidationError("list", "empty list");
  return out;
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file_atomic(path, text);
    std::cout << "wrote " << path << '\n';
  }
}

std::string prompt_path(const std::string& given, const char* message) {
  std::cout << message << '\n';
  if (!given.empty()) return given;
  std::cout << "image file: " << std::flush;
  std::string line;
  if (!std::getline(std::cin, line) || line.empty()) throw CLI::ValidationError("input", "no image given");
  return line;
}

ApiServer* running_server = nullptr;

void on_signal(int) {
  if (running_server) running_server->stop();
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"ballotgate: dual-biometric voter enrollment and polling station"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  Common common;
  std::function<int()> run;

  // enroll
  std::string face_path, finger_path;
  auto* enroll = app.add_subcommand("enroll", "register a voter from a face crop and a thumb scan");
  add_common(enroll, common, true);
  enroll->add_option("--face", face_path, "face image (PGM or PNG)")->required()->check(CLI::ExistingFile);
  enroll->add_option("--fingerprint", finger_path, "thumb scan (PGM or PNG)")->required()->check(CLI::ExistingFile);
  enroll->callback([&] {
    run = [&] {
      auto cfg = common.load();
      auto svc = open_service(cfg);
      try {
        auto rec = svc.election->enroll(read_image(face_path), read_image(finger_path));
        std::cout << "enrolled voter " << rec.voter_no << "\nencrypted id " << rec.encrypted_id << '\n';
        return exit_ok;
      } catch (const DuplicateError& e) {
        std::cout << "registration rejected: " << modality_name(e.modality())
                  << " matches voter " << e.duplicate_of() << " (similarity " << e.similarity() << ")\n";
        return exit_rejected;
      }
    };
  });

  // verify
  std::string thumb_path, vface_path;
  auto* verify = app.add_subcommand("verify", "identify by thumb, then check the face against that voter");
  add_common(verify, common, false);
  verify->add_option("--thumb", thumb_path, "thumb scan")->required()->check(CLI::ExistingFile);
  verify->add_option("--face", vface_path, "face image")->required()->check(CLI::ExistingFile);
  verify->callback([&] {
    run = [&] {
      auto cfg = common.load();
      auto reg = open_registry(cfg, key_or_placeholder());
      auto hit = reg->lookup_by_fingerprint(read_image(thumb_path));
      if (!hit) {
        std::cout << "thumb: no match\n";
        return exit_rejected;
      }
      std::cout << "thumb: voter " << hit->voter_no << ", similarity " << hit->similarity << '\n';
      FaceCheck fc;
      try {
        fc = reg->verify_face(hit->voter_no, read_image(vface_path));
      } catch (const Error& e) {
        if (e.code() != Errc::face_not_found) throw;
        std::cout << "face: not found\n";
        return exit_rejected;
      }
      std::cout << "face: similarity " << fc.result.similarity
                << (fc.identity_matches ? "" : ", nearest identity is another voter") << '\n';
      std::cout << (fc.accepted ? "verified\n" : "rejected\n");
      return fc.accepted ? exit_ok : exit_rejected;
    };
  });

  // vote
  std::string vote_thumb, vote_face, candidate;
  auto* vote = app.add_subcommand("vote", "run one voting session: thumb, face, ballot");
  add_common(vote, common, true);
  vote->add_option("--thumb", vote_thumb, "thumb scan (prompted when omitted)")->check(CLI::ExistingFile);
  vote->add_option("--face", vote_face, "face image (prompted when omitted)")->check(CLI::ExistingFile);
  vote->add_option("--candidate", candidate, "candidate id (prompted when omitted)");
  vote->callback([&] {
    run = [&] {
      auto cfg = common.load();
      auto svc = open_service(cfg);
      auto& el = *svc.election;
      auto id = el.open_session();

      auto thumb = read_image(prompt_path(vote_thumb, "Place your thumb on the scanner."));
      auto t = el.verify_thumb(id, thumb);
      if (!t.accepted) {
        std::cout << "No match found for this thumb. The polling officer has been notified.\n";
        return exit_rejected;
      }
      std::cout << "Thumb verified.\n";

      auto face = read_image(prompt_path(vote_face, "Look into the camera."));
      auto f = el.verify_face(id, face);
      if (!f.accepted) {
        std::cout << "Face does not match the registered voter. The polling officer has been notified.\n";
        return exit_rejected;
      }
      std::cout << "Face verified. You may cast your vote.\n";

      std::cout << el.ballot().election_name << '\n';
      for (const auto& c : el.ballot().candidates) std::cout << "  " << c.id << "  " << c.name << '\n';
      std::string choice = candidate;
      while (true) {
        if (choice.empty()) {
          std::cout << "candidate id: " << std::flush;
          if (!std::getline(std::cin, choice)) throw CLI::ValidationError("input", "no candidate given");
        }
        try {
          auto r = el.cast_vote(id, choice);
          std::cout << "Vote recorded.\nreceipt session " << r.session_id << " candidate " << r.candidate_id
                    << " at " << r.cast_at << '\n';
          return exit_ok;
        } catch (const Error& e) {
          if (e.code() == Errc::already_voted) {
            std::cout << "This voter has already voted. The polling officer has been notified.\n";
            return exit_rejected;
          }
          if (e.code() != Errc::unknown_candidate) throw;
          std::cout << "No candidate '" << choice << "' on this ballot.\n";
          if (!candidate.empty()) return exit_rejected;
          choice.clear();
        }
      }
    };
  });

  // tally
  auto* tally = app.add_subcommand("tally", "print vote counts and turnout");
  add_common(tally, common, true);
  tally->callback([&] {
    run = [&] {
      auto cfg = common.load();
      auto ballot = load_ballot(cfg.ballot_path);
      Tally t;
      if (fs::exists(cfg.registry_path)) t = open_registry(cfg, key_or_placeholder())->tally();
      for (const auto& c : ballot.candidates) std::cout << c.id << '\t' << (t.counts.count(c.id) ? t.counts.at(c.id) : 0) << '\n';
      std::cout << "turnout\t" << t.turnout << '\n';
      return exit_ok;
    };
  });

  // serve
  int port = -1;
  std::string host;
  auto* serve = app.add_subcommand("serve", "run the HTTP API");
  add_common(serve, common, true);
  serve->add_option("--port", port, "listen port (overrides config)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "listen address (overrides config)");
  serve->callback([&] {
    run = [&] {
      auto cfg = common.load();
      if (port >= 0) cfg.port = port;
      if (!host.empty()) cfg.host = host;
      auto svc = open_service(cfg);
      ApiServer server(*svc.election);
      running_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << cfg.host << ':' << cfg.port << '\n';
      bool ok = server.listen(cfg.host, cfg.port);
      running_server = nullptr;
      if (!ok) {
        std::cerr << "cannot listen on " << cfg.host << ':' << cfg.port << '\n';
        return exit_usage;
      }
      return exit_ok;
    };
  });

  // train-cascade
  std::string cascade_out, stages_text = "10,25";
  int tc_faces = 100, tc_nonfaces = 200, stride = 13;
  std::uint64_t tc_seed = 1;
  auto* train = app.add_subcommand("train-cascade", "train a face detector cascade on synthetic windows");
  train->add_option("--out", cascade_out, "cascade JSON to write")->required();
  train->add_option("--faces", tc_faces, "face windows")->check(CLI::PositiveNumber);
  train->add_option("--nonfaces", tc_nonfaces, "non-face windows")->check(CLI::PositiveNumber);
  train->add_option("--seed", tc_seed, "generator seed");
  train->add_option("--stages", stages_text, "weak learners per stage, comma separated");
  train->add_option("--feature-stride", stride, "use every n-th Haar feature")->check(CLI::PositiveNumber);
  train->callback([&] {
    run = [&] {
      CascadeOptions opts;
      opts.stage_sizes = parse_list(stages_text);
      auto set = synth::detector_training_set(tc_faces, tc_nonfaces, tc_seed);
      auto all = enumerate_features(24);
      std::vector<HaarFeature> pool;
      for (std::size_t i = 0; i < all.size(); i += static_cast<std::size_t>(stride)) pool.push_back(all[i]);
      auto cascade = train_cascade(set.windows, set.labels, opts, pool);
      save_cascade(cascade_out, cascade);
      std::cout << "trained " << cascade.stages.size() << " stages on " << pool.size() << " features\nwrote "
                << cascade_out << '\n';
      return exit_ok;
    };
  });

  // fit-model
  std::string fit_dataset, model_out;
  int fit_m = 40, fit_side = 42;
  auto* fit = app.add_subcommand("fit-model", "fit the eigenface model");
  fit->add_option("--dataset", fit_dataset, "face dataset directory (synthetic faces when omitted)")
      ->check(CLI::ExistingDirectory);
  fit->add_option("--out", model_out, "model JSON to write")->required();
  fit->add_option("--m", fit_m, "eigen components")->check(CLI::PositiveNumber);
  fit->add_option("--side", fit_side, "crop side; d = side * side")->check(CLI::PositiveNumber);
  fit->callback([&] {
    run = [&] {
      EigenModel model;
      if (fit_dataset.empty()) {
        model = synth::reference_face_model(40, fit_side, fit_m);
      } else {
        std::vector<FaceVector> faces;
        for (const auto& img : load_dataset(fit_dataset).images) faces.push_back(face_vector(read_image(img.path), fit_side));
        model = fit_eigenmodel(faces, fit_m);
      }
      save_model(model_out, model);
      std::cout << "model d=" << model.dimension() << " m=" << model.components() << "\nwrote " << model_out << '\n';
      return exit_ok;
    };
  });

  // eval-face / eval-fingerprint
  std::string eval_dataset, eval_config;
  auto* eval_face_cmd = app.add_subcommand("eval-face", "face testing outcome table");
  auto* eval_fp_cmd = app.add_subcommand("eval-fingerprint", "fingerprint testing outcome table");
  for (auto* cmd : {eval_face_cmd, eval_fp_cmd}) {
    cmd->add_option("--dataset", eval_dataset, "dataset directory with split.txt")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--config", eval_config, "JSON config file")->check(CLI::ExistingFile);
  }
  auto eval_cfg = [&] { return eval_config.empty() ? ApiConfig{} : load_config(eval_config); };
  eval_face_cmd->callback([&] {
    run = [&] {
      std::cout << format_report(eval_face(eval_dataset, eval_cfg()), Modality::face);
      return exit_ok;
    };
  });
  eval_fp_cmd->callback([&] {
    run = [&] {
      std::cout << format_report(eval_fingerprint(eval_dataset, eval_cfg()), Modality::fingerprint);
      return exit_ok;
    };
  });

  // bench
  std::string dims_text = "196,784,1764", csv_out;
  int trials = 5;
  auto* bench = app.add_subcommand("bench", "response time against face vector dimension");
  bench->add_option("--dataset", eval_dataset, "face dataset directory")->required()->check(CLI::ExistingDirectory);
  bench->add_option("--dims", dims_text, "dimensions, comma separated perfect squares");
  bench->add_option("--trials", trials, "timed trials per dimension")->check(CLI::PositiveNumber);
  bench->add_option("--config", eval_config, "JSON config file")->check(CLI::ExistingFile);
  bench->add_option("--out", csv_out, "CSV file (stdout when omitted)");
  bench->callback([&] {
    run = [&] {
      write_output(csv_out, timing_csv(bench_response(eval_dataset, parse_list(dims_text), trials, eval_cfg())));
      return exit_ok;
    };
  });

  // compare
  std::string k_text = "1,3,5";
  auto* compare = app.add_subcommand("compare", "5-fold accuracy of KNN alone against the cascade");
  compare->add_option("--dataset", eval_dataset, "face dataset directory")->required()->check(CLI::ExistingDirectory);
  compare->add_option("--k", k_text, "neighbour counts, comma separated");
  compare->add_option("--config", eval_config, "JSON config file")->check(CLI::ExistingFile);
  compare->add_option("--out", csv_out, "CSV file (stdout when omitted)");
  compare->callback([&] {
    run = [&] {
      auto c = compare_classifiers(eval_dataset, parse_list(k_text), eval_cfg());
      for (const auto& w : c.warnings) std::cerr << "warning: " << w << '\n';
      write_output(csv_out, comparison_csv(c));
      return exit_ok;
    };
  });

  // make-dataset
  std::string kind, ds_out;
  int identities = 10, per_identity = 10, enroll_count = 8, ds_side = 42;
  std::uint64_t ds_seed = 1000;
  double strength = 0.25;
  auto* make = app.add_subcommand("make-dataset", "write a synthetic dataset");
  make->add_option("--kind", kind, "faces, fingerprints or voters")
      ->required()
      ->check(CLI::IsMember({"faces", "fingerprints", "voters"}));
  make->add_option("--out", ds_out, "output directory")->required();
  make->add_option("--identities", identities, "identities (voters for --kind voters)")->check(CLI::PositiveNumber);
  make->add_option("--per-identity", per_identity, "images per identity")->check(CLI::PositiveNumber);
  make->add_option("--enroll", enroll_count, "images per identity in the enroll split")->check(CLI::NonNegativeNumber);
  make->add_option("--seed", ds_seed, "generator seed");
  make->add_option("--side", ds_side, "face crop side")->check(CLI::PositiveNumber);
  make->add_option("--strength", strength, "face capture variation")->check(CLI::Range(0.0, 1.0));
  make->callback([&] {
    run = [&] {
      if (kind == "faces") {
        synth::write_face_dataset(ds_out, identities, per_identity, enroll_count, ds_side, ds_seed, strength);
      } else if (kind == "fingerprints") {
        synth::write_fingerprint_dataset(ds_out, identities, per_identity, enroll_count, ds_seed);
      } else {
        // Enrollment captures plus one rescan per voter.
        for (int v = 0; v < identities; ++v) {
          auto dir = fs::path(ds_out) / ("voter" + std::to_string(v + 1));
          fs::create_directories(dir);
          auto seed = ds_seed + static_cast<std::uint64_t>(v);
          auto p = synth::make_person(seed, 0, ds_side);
          auto r = synth::make_person(seed, 1, ds_side);
          write_pgm(dir / "face.pgm", p.face);
          write_pgm(dir / "finger.pgm", p.finger);
          write_pgm(dir / "face_rescan.pgm", r.face);
          write_pgm(dir / "finger_rescan.pgm", r.finger);
        }
        Ballot ballot{"Synthetic election", {{"A", "Candidate A"}, {"B", "Candidate B"}, {"C", "Candidate C"}}};
        write_file_atomic(fs::path(ds_out) / "ballot.json", ballot_to_json(ballot));
      }
      std::cout << "wrote " << ds_out << '\n';
      return exit_ok;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_usage;
  }

  try {
    return run();
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return exit_usage;
  } catch (const Error& e) {
    std::cerr << "error (" << errc_name(e.code()) << "): " << e.what() << '\n';
    return exit_usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_usage;
  }
}
