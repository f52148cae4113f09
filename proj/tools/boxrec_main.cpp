#include <CLI11.hpp>

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "boxrec/checkpoint.hpp"
#include "boxrec/config.hpp"
#include "boxrec/datasets.hpp"
#include "boxrec/encoder.hpp"
#include "boxrec/errors.hpp"
#include "boxrec/evaluation.hpp"
#include "boxrec/gradient_suite.hpp"
#include "boxrec/kernels.hpp"
#include "boxrec/pca.hpp"
#include "boxrec/synthetic.hpp"
#include "boxrec/training.hpp"

namespace {

using namespace boxrec;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

struct PrepareArgs {
  std::string input;
  std::string format = "tsv";
  std::optional<double> rating_threshold;
  std::string out;
};

int run_prepare(const PrepareArgs& args) {
  const auto log =
      datasets::load_log(args.input, datasets::format_from_name(args.format), args.rating_threshold);
  const auto filtered = datasets::filter_min_activity(log);
  const auto split = datasets::chronological_split(filtered);
  datasets::save_bundle(split, args.out);

  std::ostringstream stats;
  stats << "interactions=" << split.n_interactions() << '\n'
        << "users=" << split.n_users() << '\n'
        << "items=" << split.n_items() << '\n';
  char density[64];
  std::snprintf(density, sizeof(density), "density_percent=%.6f\n", 100.0 * split.density());
  stats << density << "users_excluded=" << split.users_excluded << '\n';
  write_text(std::filesystem::path(args.out) / "stats.txt", stats.str());

  std::ostringstream resolved;
  resolved << "input=" << args.input << "\nformat=" << args.format << "\nrating_threshold="
           << (args.rating_threshold ? std::to_string(*args.rating_threshold) : std::string("none"))
           << '\n';
  write_text(std::filesystem::path(args.out) / "resolved_config.txt", resolved.str());

  std::cout << stats.str();
  return kExitOk;
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config_file;
  std::string ablation;
  config::KeyValues overrides;
};

int run_train(const TrainArgs& args) {
  training::TrainConfig cfg;
  if (!args.config_file.empty()) config::apply(cfg, config::parse_file(args.config_file));
  config::apply(cfg, args.overrides);  // flags win
  if (args.ablation == "no-nn")
    cfg.ablate_neural = true;
  else if (!args.ablation.empty())
    throw std::invalid_argument("unknown ablation '" + args.ablation + "' (expected no-nn)");

  const auto split = datasets::load_bundle(args.data);
  std::filesystem::create_directories(args.out);
  write_text(std::filesystem::path(args.out) / "resolved_config.txt", config::resolved(cfg));

  const auto result = training::fit(split, cfg, args.out);
  for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e)
    std::cout << "epoch " << e << " mean_loss " << result.epoch_mean_loss[e] << '\n';
  std::cout << "checkpoint " << result.checkpoint_path.string() << '\n';
  return kExitOk;
}

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::vector<std::size_t> ks = {5, 10, 20, 30, 50};
  bool point_baseline = false;
  std::string report;
};

int run_evaluate(const EvaluateArgs& args) {
  LoadedModel model = load_checkpoint(args.checkpoint);
  if (args.point_baseline) model = evaluation::point_baseline(model);
  const auto split = datasets::load_bundle(args.data);
  const auto report = evaluation::evaluate(model, split, args.ks);

  std::printf("%-6s %-10s %-10s %-10s\n", "k", "recall", "ndcg", "map");
  for (const auto& row : report.rows)
    std::printf("%-6zu %-10.6f %-10.6f %-10.6f\n", row.k, row.recall, row.ndcg, row.map);
  std::printf("users_evaluated=%zu users_skipped=%zu\n", report.users_evaluated, report.users_skipped);

  if (!args.report.empty()) {
    nlohmann::ordered_json doc;
    doc["dataset"] = std::filesystem::path(args.data).filename().string();
    doc["mode"] = mode_name(model.config.mode);
    doc["boxes"] = model.config.boxes;
    doc["gamma"] = model.distance.gamma;
    doc["pooling"] = pooling_name(model.config.pooling);
    doc["point_baseline"] = args.point_baseline;
    doc["seed"] = model.seed;
    doc["n_users"] = report.users_evaluated;
    doc["users_skipped"] = report.users_skipped;
    doc["metrics"] = nlohmann::ordered_json::array();
    for (const auto& row : report.rows)
      doc["metrics"].push_back({{"k", row.k}, {"recall", row.recall}, {"ndcg", row.ndcg}, {"map", row.map}});
    write_text(args.report, doc.dump(2) + "\n");
  }
  return kExitOk;
}

struct RecommendArgs {
  std::string checkpoint;
  std::string data;
  std::string user;
  std::size_t k = 10;
};

int run_recommend(const RecommendArgs& args) {
  const LoadedModel model = load_checkpoint(args.checkpoint);
  const auto split = datasets::load_bundle(args.data);
  const std::uint32_t user = split.user_vocab.at(args.user);
  const auto ranked = evaluation::score_all(model, split, user);
  const std::size_t top = std::min(args.k, ranked.items.size());
  for (std::size_t r = 0; r < top; ++r)
    std::printf("%zu\t%s\t%.9g\n", r + 1, split.item_vocab.name_of(ranked.items[r]).c_str(),
                ranked.distances[r]);
  return kExitOk;
}

struct ExportArgs {
  std::string checkpoint;
  std::string what;
  std::string data;
  std::size_t pca = 0;
  std::string out;
};

int run_export(const ExportArgs& args) {
  const LoadedModel model = load_checkpoint(args.checkpoint);
  std::ostringstream os;
  os.precision(9);

  if (args.what == "items") {
    const std::size_t n = model.params.n_items();
    const std::size_t d = model.config.dim;
    Tensor<double> mat(n, d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) mat.at(i, c) = model.params.item_embeddings.at(i + 1, c);
    if (args.pca > 0) mat = pca_project(mat, args.pca);
    std::optional<datasets::SplitDataset> split;
    if (!args.data.empty()) split = datasets::load_bundle(args.data);
    for (std::size_t i = 0; i < n; ++i) {
      os << (split ? split->item_vocab.name_of(static_cast<std::uint32_t>(i + 1))
                   : std::to_string(i + 1));
      for (std::size_t c = 0; c < mat.cols; ++c) os << ' ' << mat.at(i, c);
      os << '\n';
    }
  } else if (args.what == "boxes") {
    if (args.data.empty()) throw std::invalid_argument("export boxes needs --data for user histories");
    if (args.pca > 0) throw std::invalid_argument("--pca applies to the items export only");
    const auto split = datasets::load_bundle(args.data);
    for (std::uint32_t u = 1; u <= split.n_users(); ++u) {
      const auto history = split.inference_history(u);
      if (history.empty()) continue;
      const auto boxes = encode_user(model.config, model.params, history);
      for (std::size_t b = 0; b < boxes.boxes.size(); ++b) {
        os << split.user_vocab.name_of(u) << ' ' << b;
        for (double x : boxes.boxes[b].center) os << ' ' << x;
        for (double x : boxes.boxes[b].offset) os << ' ' << x;
        os << '\n';
      }
    }
  } else {
    throw std::invalid_argument("export: --what must be items or boxes");
  }

  if (args.out.empty())
    std::cout << os.str();
  else
    write_text(args.out, os.str());
  return kExitOk;
}

int run_grad_check(bool inject_bug) {
  auto entries = inject_bug ? op_gradient_suite(ad::Op::kSigmoid, 1.5) : op_gradient_suite();
  if (!inject_bug) {
    auto model_entries = model_gradient_suite();
    entries.insert(entries.end(), model_entries.begin(), model_entries.end());
  }
  std::size_t bad = 0;
  for (const auto& e : entries) {
    const bool ok = e.report.ok();
    if (!ok) ++bad;
    std::printf("%-40s %s checked=%zu skipped=%zu failed=%zu max_rel_err=%.3g\n", e.name.c_str(),
                ok ? "PASS" : "FAIL", e.report.checked, e.report.skipped, e.report.failed,
                e.report.max_rel_error);
    for (const auto& f : e.report.failures)
      std::printf("    %s[%zu]: analytic=%.9g numeric=%.9g\n", f.param.c_str(), f.index, f.analytic,
                  f.numeric);
  }
  std::printf("%zu/%zu checks passed\n", entries.size() - bad, entries.size());
  return bad == 0 ? kExitOk : kExitNumeric;
}

struct SynthArgs {
  std::string spec_file;
  std::string out;
  config::KeyValues overrides;
};

int run_synth(const SynthArgs& args) {
  synthetic::WorldConfig cfg;
  if (!args.spec_file.empty()) config::apply(cfg, config::parse_file(args.spec_file));
  config::apply(cfg, args.overrides);

  const auto world = synthetic::generate_box_world(cfg);
  synthetic::write_world(world, args.out);
  write_text(std::filesystem::path(args.out) / "resolved_config.txt", config::resolved(cfg));
  std::cout << "users=" << cfg.users << " items=" << cfg.items << " interactions=" << world.log.size()
            << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hypercuboid user representations for next-item recommendation"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "cap on worker threads (0 = all)");

  PrepareArgs prepare;
  auto* cmd_prepare = app.add_subcommand("prepare", "filter a raw log and build a dataset bundle");
  cmd_prepare->add_option("--input", prepare.input, "interaction log file")->required();
  cmd_prepare->add_option("--format", prepare.format, "tsv or csv");
  double rating_threshold = -1;
  auto* thr_opt = cmd_prepare->add_option("--rating-threshold", rating_threshold,
                                          "drop rows with a rating below this");
  cmd_prepare->add_option("--out", prepare.out, "bundle output directory")->required();

  TrainArgs train;
  auto* cmd_train = app.add_subcommand("train", "train a model on a bundle");
  cmd_train->add_option("--data", train.data, "bundle directory")->required();
  cmd_train->add_option("--out", train.out, "run output directory")->required();
  cmd_train->add_option("--config", train.config_file, "key=value config file");
  cmd_train->add_option("--ablation", train.ablation, "no-nn: mean-pool raw embeddings");
  std::map<std::string, std::string> train_flags;
  for (const char* key : {"dim", "window", "targets", "boxes", "mode", "memory_slots", "pooling",
                          "dropout_rate", "gamma", "alpha", "learning_rate", "margin", "l2",
                          "batch_size", "epochs", "negatives_per_positive", "seed", "use_additional",
                          "freeze_offsets"}) {
    train_flags[key] = "";
    cmd_train->add_option("--" + std::string(key), train_flags[key], key);
  }

  EvaluateArgs evaluate;
  auto* cmd_eval = app.add_subcommand("evaluate", "rank all items and report Recall/NDCG/MAP");
  cmd_eval->add_option("--checkpoint", evaluate.checkpoint, "model checkpoint")->required();
  cmd_eval->add_option("--data", evaluate.data, "bundle directory")->required();
  cmd_eval->add_option("--ks", evaluate.ks, "cutoffs")->delimiter(',');
  cmd_eval->add_flag("--point-baseline", evaluate.point_baseline, "score with offsets pinned to zero");
  cmd_eval->add_option("--report", evaluate.report, "write a JSON report here");

  RecommendArgs recommend;
  auto* cmd_rec = app.add_subcommand("recommend", "top-k items for one user");
  cmd_rec->add_option("--checkpoint", recommend.checkpoint)->required();
  cmd_rec->add_option("--data", recommend.data)->required();
  cmd_rec->add_option("--user", recommend.user, "external user id")->required();
  cmd_rec->add_option("--k", recommend.k);

  ExportArgs exp;
  auto* cmd_export = app.add_subcommand("export", "dump item embeddings or user boxes as text");
  cmd_export->add_option("--checkpoint", exp.checkpoint)->required();
  cmd_export->add_option("--what", exp.what, "items or boxes")->required();
  cmd_export->add_option("--data", exp.data, "bundle (needed for boxes / external ids)");
  cmd_export->add_option("--pca", exp.pca, "project items to this many dimensions");
  cmd_export->add_option("--out", exp.out, "output file (default stdout)");

  bool grad_break = false;
  auto* cmd_grad = app.add_subcommand("grad-check", "finite-difference checks of every gradient rule");
  cmd_grad->add_flag("--break", grad_break, "inject a gradient bug; the check must then fail");
  std::string grad_dims = "toy";
  cmd_grad->add_option("--dims", grad_dims, "problem size (toy)");

  SynthArgs synth;
  auto* cmd_synth = app.add_subcommand("synth", "generate a ground-truth box world bundle");
  cmd_synth->add_option("--spec", synth.spec_file, "key=value world description");
  cmd_synth->add_option("--out", synth.out, "output directory")->required();
  std::map<std::string, std::string> synth_flags;
  for (const char* key : {"users", "items", "latent_dim", "boxes_per_user", "noise", "seed",
                          "offset_min", "offset_max", "stay_prob", "min_items_per_user"}) {
    synth_flags[key] = "";
    cmd_synth->add_option("--" + std::string(key), synth_flags[key], key);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints the message / help text
    return code == 0 ? kExitOk : kExitUsage;
  }
  kernels::set_max_threads(threads);

  try {
    if (cmd_prepare->parsed()) {
      if (thr_opt->count() > 0) prepare.rating_threshold = rating_threshold;
      return run_prepare(prepare);
    }
    if (cmd_train->parsed()) {
      for (const auto& [key, value] : train_flags)
        if (!value.empty()) train.overrides[key] = value;
      return run_train(train);
    }
    if (cmd_eval->parsed()) return run_evaluate(evaluate);
    if (cmd_rec->parsed()) return run_recommend(recommend);
    if (cmd_export->parsed()) return run_export(exp);
    if (cmd_grad->parsed()) {
      if (grad_dims != "toy") throw std::invalid_argument("grad-check: only --dims toy is available");
      return run_grad_check(grad_break);
    }
    if (cmd_synth->parsed()) {
      for (const auto& [key, value] : synth_flags)
        if (!value.empty()) synth.overrides[key] = value;
      return run_synth(synth);
    }
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
