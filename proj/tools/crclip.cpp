#include <CLI11.hpp>
#include <json.hpp>

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>

#include "crclip/gradcheck.hpp"
#include "crclip/io.hpp"
#include "crclip/metrics.hpp"
#include "crclip/model.hpp"
#include "crclip/synthdata.hpp"
#include "crclip/trainer.hpp"
#include "crclip/tta.hpp"

using namespace crclip;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

struct FullConfig {
  std::uint64_t seed = 7;
  ModelConfig model;
  TrainConfig train;
  TtaConfig tta;
};

FullConfig parse_full_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("config: invalid JSON: ") + e.what());
  }
  FullConfig c;
  c.seed = j.value("seed", c.seed);
  if (j.contains("model")) c.model = ModelConfig::from_json(j["model"].dump());
  if (j.contains("train")) c.train = TrainConfig::from_json(j["train"].dump());
  if (j.contains("tta")) {
    const auto& t = j["tta"];
    c.tta.enable_flip = t.value("enable_flip", c.tta.enable_flip);
    if (t.contains("scales")) c.tta.scales = t["scales"].get<std::vector<double>>();
  }
  c.train.seed = c.seed;  // one seed drives everything
  return c;
}

void check_model_covers_dataset(const ModelConfig& m, const SynthConfig& d) {
  if (m.frames != d.frames || m.height != d.height || m.width != d.width ||
      m.channels != d.channels || m.patch != d.patch)
    throw ConfigError("model clip geometry does not match the dataset");
  if (m.text_vocab < vocab_size(d))
    throw ConfigError("model vocabulary " + std::to_string(m.text_vocab) +
                      " smaller than dataset vocabulary " +
                      std::to_string(vocab_size(d)));
  if (m.max_tokens < d.caption_length)
    throw ConfigError("model max_tokens smaller than caption length");
}

SynthDataset pick_split(const DatasetBundle& bundle, const std::string& which) {
  if (which == "train") return bundle.train();
  if (which == "test") return bundle.test();
  if (which == "all") return bundle.full;
  throw InputError("unknown split '" + which + "', expected train|test|all");
}

Model load_model(const std::string& checkpoint_path, std::string config_path) {
  if (config_path.empty())
    config_path =
        (std::filesystem::path(checkpoint_path).parent_path() / "config.json").string();
  const FullConfig cfg = parse_full_config(read_text_file(config_path));
  Model model = Model::init(cfg.model, 0);
  auto params = model.named_params();
  restore_into(params, load_checkpoint(checkpoint_path));
  return model;
}

void print_report(const RetrievalReport& rep) {
  std::cout << format_report_block(rep);
  std::cout << format_report_tsv(rep) << "\n";
}

int run_gen_data(const SynthConfig& cfg, const std::string& out, double train_frac) {
  SynthDataset ds = generate(cfg);
  auto [train_idx, test_idx] = split_indices(ds.size(), train_frac, cfg.seed + 1);
  save_dataset(out, ds, cfg, train_idx, test_idx);
  std::cout << "wrote " << ds.size() << " samples (" << train_idx.size() << " train, "
            << test_idx.size() << " test) to " << out << "\n";
  return kExitOk;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir) {
  const std::string config_text = read_text_file(config_path);
  FullConfig cfg = parse_full_config(config_text);
  DatasetBundle bundle = load_dataset(data_dir);
  check_model_covers_dataset(cfg.model, bundle.cfg);

  const SynthDataset train_set = bundle.train();
  const SynthDataset test_set = bundle.test();
  TrainResult result = train(cfg.model, cfg.train, train_set,
                             test_set.size() > 0 ? &test_set : nullptr);

  std::filesystem::create_directories(out_dir);
  save_checkpoint(out_dir + "/model.ckpt", result.model.named_params());
  write_text_file(out_dir + "/train_log.tsv", result.log.to_tsv());
  write_text_file(out_dir + "/config.json", config_text);
  if (!result.log.epochs.empty())
    std::cout << "final mean loss " << result.log.epochs.back().mean_loss << " after "
              << result.log.epochs.size() << " epochs\n";
  std::cout << "wrote " << out_dir << "/model.ckpt\n";
  return kExitOk;
}

int run_eval(const std::string& checkpoint, const std::string& data_dir,
             const std::string& config_path, const std::string& which,
             double threshold) {
  Model model = load_model(checkpoint, config_path);
  DatasetBundle bundle = load_dataset(data_dir);
  check_model_covers_dataset(model.cfg, bundle.cfg);
  const SynthDataset ds = pick_split(bundle, which);
  print_report(evaluate_model(model, ds, threshold));
  return kExitOk;
}

int run_tta_eval(const std::string& checkpoint, const std::string& data_dir,
                 std::string config_path, const std::string& which, bool flip_given,
                 bool flip, const std::vector<double>& scales, double threshold) {
  if (config_path.empty())
    config_path =
        (std::filesystem::path(checkpoint).parent_path() / "config.json").string();
  const FullConfig cfg = parse_full_config(read_text_file(config_path));
  Model model = Model::init(cfg.model, 0);
  auto params = model.named_params();
  restore_into(params, load_checkpoint(checkpoint));

  DatasetBundle bundle = load_dataset(data_dir);
  check_model_covers_dataset(model.cfg, bundle.cfg);
  const SynthDataset ds = pick_split(bundle, which);
  if (ds.size() == 0) throw InputError("tta-eval: empty split");

  TtaConfig tta = cfg.tta;  // config section is the default, flags override
  if (flip_given) tta.enable_flip = flip;
  if (!scales.empty()) tta.scales = scales;
  tta.validate();
  std::cout << "tta variants per clip: " << tta_variant_count(tta) << "\n";
  print_report(tta_evaluate_model(model, ds, tta, threshold));
  return kExitOk;
}

int run_gradcheck(std::uint64_t seed, int cases) {
  const auto t0 = std::chrono::steady_clock::now();
  auto reports = run_gradcheck_suite(seed, cases);
  for (const auto& r : reports)
    std::printf("%-28s cases=%-4d max_rel_err=%.3e tol=%.0e %s\n", r.name.c_str(),
                r.cases, r.max_rel_err, r.tolerance, r.pass ? "PASS" : "FAIL");
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("gradcheck: %zu suites in %.1fs\n", reports.size(), secs);
  return all_pass(reports) ? kExitOk : kExitValidation;
}

bool selfcheck_metrics() {
  Rng rng(12345);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int t = 0; t < 500; ++t) {
    const std::size_t bv = 2 + t % 7, bt = 2 + (t / 7) % 7;
    std::vector<double> cv(bv * bt);
    for (double& v : cv) v = uni(rng);
    RelevanceMatrix c(Tensor({bv, bt}, std::move(cv)));
    Tensor s = Tensor::randn({bv, bt}, rng, 0.5);
    RetrievalReport a = evaluate(s, c);
    RetrievalReport b = evaluate_reference(s, c);
    if (std::abs(a.map_v2t - b.map_v2t) > 1e-12) return false;
    if (std::abs(a.map_t2v - b.map_t2v) > 1e-12) return false;
    if (std::abs(a.ndcg_v2t - b.ndcg_v2t) > 1e-12) return false;
    if (std::abs(a.ndcg_t2v - b.ndcg_t2v) > 1e-12) return false;
    if (evaluate(c.values, c).ndcg_v2t != 1.0) return false;  // ideal ranking
  }
  return truncate_pct(0.66789) == "66.78" && truncate_pct(1.0) == "100.00";
}

bool selfcheck_io() {
  namespace fs = std::filesystem;
  const std::string dir =
      (fs::temp_directory_path() / ("crclip_selfcheck_" + std::to_string(::getpid())))
          .string();
  fs::create_directories(dir);
  bool ok = true;
  try {
    Rng rng(99);
    Tensor m = Tensor::randn({9, 5}, rng);
    write_matrix(dir + "/m.crmx", m);
    Tensor back = read_matrix(dir + "/m.crmx");
    ok = ok && back.data() == m.data();

    std::vector<std::pair<std::string, Tensor>> named{
        {"a", Tensor::randn({4, 4}, rng)}, {"b", Tensor::randn({3}, rng)}};
    save_checkpoint(dir + "/ck.bin", named);
    auto loaded = load_checkpoint(dir + "/ck.bin");
    ok = ok && loaded.size() == 2 && loaded[0].second.data() == named[0].second.data();

    // corruption must be detected
    std::string bytes = read_text_file(dir + "/ck.bin");
    bytes[10] = static_cast<char>(bytes[10] ^ 0x01);
    write_text_file(dir + "/ck_bad.bin", bytes);
    try {
      load_checkpoint(dir + "/ck_bad.bin");
      ok = false;
    } catch (const IoError& e) {
      ok = ok && e.kind() == IoErrorKind::ChecksumMismatch;
    }
  } catch (...) {
    ok = false;
  }
  fs::remove_all(dir);
  return ok;
}

int run_selfcheck() {
  const bool metrics_ok = selfcheck_metrics();
  std::printf("metric brute-force oracles      %s\n", metrics_ok ? "PASS" : "FAIL");
  const bool io_ok = selfcheck_io();
  std::printf("io round-trips and corruption   %s\n", io_ok ? "PASS" : "FAIL");
  return metrics_ok && io_ok ? kExitOk : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ContextRefine-CLIP: desk-scale cross-modal retrieval pipeline"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  SynthConfig gen_cfg;
  std::string gen_out;
  double train_frac = 0.75;
  gen->add_option("--seed", gen_cfg.seed, "master seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--samples", gen_cfg.samples, "number of (clip, caption) pairs");
  gen->add_option("--verbs", gen_cfg.verbs, "verb classes");
  gen->add_option("--nouns", gen_cfg.nouns, "noun classes");
  gen->add_option("--frames", gen_cfg.frames, "frames per clip");
  gen->add_option("--height", gen_cfg.height, "frame height");
  gen->add_option("--width", gen_cfg.width, "frame width");
  gen->add_option("--channels", gen_cfg.channels, "frame channels");
  gen->add_option("--patch", gen_cfg.patch, "patch size");
  gen->add_option("--caption-len", gen_cfg.caption_length, "caption length");
  gen->add_option("--noise", gen_cfg.noise_sigma, "pixel noise sigma");
  gen->add_option("--train-frac", train_frac, "train fraction of the split");

  auto* tr = app.add_subcommand("train", "train a model on a dataset directory");
  std::string tr_config, tr_data, tr_out;
  tr->add_option("--config", tr_config, "JSON config file")->required();
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ev_ckpt, ev_data, ev_config, ev_split = "test";
  double ev_threshold = 0.0;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--config", ev_config, "config JSON (default: beside checkpoint)");
  ev->add_option("--split", ev_split, "train|test|all (default test)");
  ev->add_option("--threshold", ev_threshold, "mAP relevance threshold");

  auto* tta = app.add_subcommand("tta-eval", "evaluate with test-time augmentation");
  std::string tta_ckpt, tta_data, tta_config, tta_split = "test", tta_scales;
  bool tta_flip = false;
  double tta_threshold = 0.0;
  tta->add_option("--checkpoint", tta_ckpt, "checkpoint file")->required();
  tta->add_option("--data", tta_data, "dataset directory")->required();
  tta->add_option("--config", tta_config, "config JSON (default: beside checkpoint)");
  tta->add_option("--split", tta_split, "train|test|all (default test)");
  tta->add_flag("--flip", tta_flip, "add horizontal-flip variants");
  tta->add_option("--scales", tta_scales, "comma list, e.g. 0.875,1.0,1.125");
  tta->add_option("--threshold", tta_threshold, "mAP relevance threshold");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  std::uint64_t gc_seed = 7;
  int gc_cases = 100;
  gc->add_option("--seed", gc_seed, "rng seed");
  gc->add_option("--cases", gc_cases, "cases per op");

  auto* sc = app.add_subcommand("selfcheck", "metric oracles and IO round-trips");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_cfg, gen_out, train_frac);
    if (tr->parsed()) return run_train(tr_config, tr_data, tr_out);
    if (ev->parsed()) return run_eval(ev_ckpt, ev_data, ev_config, ev_split, ev_threshold);
    if (tta->parsed()) {
      std::vector<double> scales;
      if (!tta_scales.empty()) {
        std::stringstream ss(tta_scales);
        std::string item;
        while (std::getline(ss, item, ',')) scales.push_back(std::stod(item));
      }
      return run_tta_eval(tta_ckpt, tta_data, tta_config, tta_split,
                          tta->count("--flip") > 0, tta_flip, scales, tta_threshold);
    }
    if (gc->parsed()) return run_gradcheck(gc_seed, gc_cases);
    if (sc->parsed()) return run_selfcheck();
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitOk;
}
