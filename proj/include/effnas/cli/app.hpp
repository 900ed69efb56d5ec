#pragma once

#include <filesystem>
#include <iostream>
#include <set>

#include "effnas/arch/count.hpp"
#include "effnas/cli/config.hpp"
#include "effnas/search/pipeline.hpp"

namespace effnas::cli {

/// Exit status contract.
enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2 };

/// Raised for invalid flag combinations that CLI11 cannot express.
class UsageError : public Error {
 public:
  using Error::Error;
};

namespace detail {

namespace fs = std::filesystem;

/// Runs of equal block kinds, e.g. "MB4D ×4, MB3D ×8".
inline std::string block_runs(const arch::StageSpec& st) {
  std::string out;
  for (std::size_t i = 0; i < st.blocks.size();) {
    std::size_t j = i;
    const std::string kind = arch::kind_name(st.blocks[i]);
    while (j < st.blocks.size() && kind == arch::kind_name(st.blocks[j])) ++j;
    if (!out.empty()) out += ", ";
    out += kind + " ×" + std::to_string(j - i);
    i = j;
  }
  return out.empty() ? "(no blocks)" : out;
}

inline std::string show_text(const arch::ArchSpec& s) {
  std::string out = s.name + ": resolution " + std::to_string(s.resolution) + ", classes " +
                    std::to_string(s.classes) + ", stem " + std::to_string(s.stem[0]) + "-" +
                    std::to_string(s.stem[1]) + "\n";
  for (int j = 0; j < arch::kStages; ++j) {
    const auto& st = s.stages[j];
    out += "stage " + std::to_string(j + 1) + ": width " + std::to_string(st.width) + (st.embedding ? ", embed" : "") +
           ", " + block_runs(st) + "\n";
  }
  return out;
}

inline std::string human(double v) {
  char buf[32];
  if (v >= 1e9) {
    std::snprintf(buf, sizeof buf, "%.2fG", v / 1e9);
  } else {
    std::snprintf(buf, sizeof buf, "%.2fM", v / 1e6);
  }
  return buf;
}

inline arch::Json count_json(const arch::ArchSpec& s, std::int64_t res) {
  const auto r = arch::count_report(s, res);
  arch::Json stages = arch::Json::array();
  for (int j = 0; j < arch::kStages; ++j) {
    stages.push_back({{"stage", j + 1}, {"params", r.stages[j].params.trainable}, {"macs", r.stages[j].macs}});
  }
  return {{"name", s.name},
          {"resolution", res},
          {"params", r.params().trainable},
          {"buffers", r.params().buffers},
          {"macs", r.macs()},
          {"stem", {{"params", r.stem.trainable}, {"macs", r.stem_macs}}},
          {"stages", stages},
          {"head", {{"params", r.head.trainable}, {"macs", r.head_macs}}}};
}

inline std::string count_text(const arch::Json& j) {
  std::string out = j["name"].get<std::string>() + " at " + std::to_string(j["resolution"].get<std::int64_t>()) + "x" +
                    std::to_string(j["resolution"].get<std::int64_t>()) + "\n";
  char buf[160];
  auto line = [&](const std::string& what, const arch::Json& e) {
    std::snprintf(buf, sizeof buf, "  %-8s params %12lld  MACs %14lld\n", what.c_str(),
                  static_cast<long long>(e["params"].get<std::int64_t>()),
                  static_cast<long long>(e["macs"].get<std::int64_t>()));
    out += buf;
  };
  line("stem", j["stem"]);
  for (const auto& s : j["stages"]) line("stage " + std::to_string(s["stage"].get<int>()), s);
  line("head", j["head"]);
  out += "params " + std::to_string(j["params"].get<std::int64_t>()) + " (" +
         human(static_cast<double>(j["params"].get<std::int64_t>())) + ")\n";
  out += "MACs " + std::to_string(j["macs"].get<std::int64_t>()) + " (" +
         human(static_cast<double>(j["macs"].get<std::int64_t>())) + ")\n";
  return out;
}

inline std::vector<std::string> split_list(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& r : raw) {
    std::stringstream ss(r);
    for (std::string item; std::getline(ss, item, ',');)
      if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir + ": " + ec.message());
}

inline std::string join_path(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

}  // namespace detail

/// Command-line front end. Reports go to `out`, progress and diagnostics to
/// `err`.
class App {
 public:
  App(std::ostream& out, std::ostream& err) : out_(out), err_(err) { build(); }

  int run(std::vector<std::string> args) {
    try {
      args = merge_config(std::move(args));
    } catch (const Error& e) {
      err_ << "error: " << e.what() << "\n";
      return kUsage;
    }
    std::reverse(args.begin(), args.end());
    try {
      app_.parse(args);
    } catch (const CLI::CallForHelp&) {
      out_ << app_.help();
      return kOk;
    } catch (const CLI::CallForAllHelp&) {
      out_ << app_.help("", CLI::AppFormatMode::All);
      return kOk;
    } catch (const CLI::ParseError& e) {
      err_ << "usage error: " << e.what() << "\n";
      return kUsage;
    }
    if (!action_) {
      out_ << app_.help();
      return kUsage;
    }
    try {
      return action_();
    } catch (const UsageError& e) {
      err_ << "usage error: " << e.what() << "\n";
      return kUsage;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << "\n";
      return kFailure;
    }
  }

 private:
  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"Latency-driven slimming search for hybrid vision networks", "effnas"};
  std::function<int()> action_;

  // Shared option storage.
  std::string spec_path_, preset_, out_path_, space_path_, data_path_, lut_path_, supernet_path_, model_path_;
  std::string evaluator_ = "supernet", importance_ = "softplus", noise_ = "uniform", split_ = "test";
  std::string kind_ = "quadrant-pattern";
  std::int64_t resolution_ = 0, classes_ = 0;
  std::vector<std::string> kinds_, widths_;
  int warmup_ = 5, measure_ = 30, repeat_ = 1, batch_ = 1;
  bool json_ = false, synthetic_ = false;
  std::uint64_t seed_ = 0;
  int supernet_epochs_ = 10, train_epochs_ = 20, warmup_epochs_ = 1, max_iters_ = 200;
  std::int64_t batch_size_ = 64;
  double lr_ = 0, alpha_lr_ = 3e-3, min_lr_ = 1e-5, weight_decay_ = 0.05;
  double target_ms_ = 0, target_fraction_ = 0.6, eval_tau_ = 0.1, noise_level_ = 0.6;
  std::int64_t n_train_ = 1024, n_val_ = 256, n_test_ = 512;

  /// Registers `fn` as the action run when `sub` is the parsed command.
  void on(CLI::App* sub, std::function<int()> fn, const std::string& command) {
    sub->parse_complete_callback([this, sub, fn, command] {
      action_ = [this, sub, fn, command] {
        command_ = command;
        config_ = resolved_config(*sub, command);
        if (config_["options"].contains("lr")) config_["options"]["lr"] = lut::format_double(effective_lr());
        return fn();
      };
    });
  }

  std::string command_;
  arch::Json config_;

  double effective_lr() const { return lr_ > 0 ? lr_ : train::scaled_lr(batch_size_); }

  void write_config(const std::string& dir) { write_text(detail::join_path(dir, "config.json"), config_.dump(2) + "\n"); }

  /// Single-file outputs record their configuration next to the file.
  void write_config_beside(const std::string& file) { write_text(file + ".config.json", config_.dump(2) + "\n"); }

  static void write_text(const std::string& path, const std::string& text) { slim::write_text(path, text); }

  arch::ArchSpec load_spec() const {
    if (!spec_path_.empty() && !preset_.empty()) throw UsageError("give either an architecture file or --preset");
    arch::ArchSpec s;
    if (!spec_path_.empty()) {
      s = arch::load_arch(spec_path_);
    } else if (!preset_.empty()) {
      s = arch::preset(preset_);
    } else {
      throw UsageError("an architecture file or --preset is required");
    }
    if (classes_ > 0) s.classes = classes_;
    return s;
  }

  supernet::SearchSpace load_space() const {
    if (!space_path_.empty()) {
      std::ifstream f(space_path_);
      if (!f) throw Error("cannot read search space " + space_path_);
      std::stringstream ss;
      ss << f.rdbuf();
      try {
        return supernet::space_from_json(arch::Json::parse(ss.str()));
      } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("search space " + space_path_ + " is not valid JSON: " + e.what());
      }
    }
    return supernet::SearchSpace::from_arch(arch::preset(preset_.empty() ? "toy" : preset_));
  }

  train::DatasetSpec dataset_spec(std::int64_t classes, std::int64_t resolution) const {
    train::DatasetSpec d;
    d.kind = train::parse_dataset_kind(kind_);
    d.classes = static_cast<int>(classes);
    d.resolution = resolution;
    d.train = n_train_;
    d.val = n_val_;
    d.test = n_test_;
    d.seed = seed_;
    d.noise = noise_level_;
    return d;
  }

  /// Dataset cache from --data, or a freshly generated set matching the model.
  train::Splits load_data(std::int64_t classes, std::int64_t resolution) const {
    if (!data_path_.empty()) return train::load_dataset(data_path_);
    return train::gen_synthetic(dataset_spec(classes, resolution));
  }

  train::TrainConfig train_config(const std::string& dir, const std::string& ckpt, int epochs) {
    train::TrainConfig c;
    c.epochs = epochs;
    c.batch_size = batch_size_;
    c.base_lr = effective_lr();
    c.min_lr = min_lr_;
    c.warmup_epochs = warmup_epochs_;
    c.adamw.weight_decay = weight_decay_;
    c.seed = seed_;
    c.checkpoint_path = detail::join_path(dir, ckpt);
    c.metrics_path = detail::join_path(dir, "metrics.csv");
    c.on_epoch = [this](const train::MetricRow& r) {
      err_ << "epoch " << r.epoch << " step " << r.step << " lr " << r.lr << " loss " << r.loss << " top1 " << r.top1
           << "\n";
    };
    return c;
  }

  void add_arch_source(CLI::App* sub) {
    sub->add_option("spec", spec_path_, "Architecture JSON file");
    sub->add_option("--preset", preset_, "Named preset (L1, L3, L7, toy)");
  }

  void add_train_options(CLI::App* sub, int& epochs) {
    sub->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
    sub->add_option("--batch-size", batch_size_, "Mini-batch size")->check(CLI::PositiveNumber);
    sub->add_option("--lr", lr_, "Peak learning rate; 0 selects 1e-3 * batch / 1024")->check(CLI::NonNegativeNumber);
    sub->add_option("--min-lr", min_lr_, "Final learning rate")->check(CLI::NonNegativeNumber);
    sub->add_option("--warmup-epochs", warmup_epochs_, "Linear warmup epochs")->check(CLI::NonNegativeNumber);
    sub->add_option("--weight-decay", weight_decay_, "Decoupled weight decay")->check(CLI::NonNegativeNumber);
  }

  void add_data_options(CLI::App* sub, bool with_path) {
    if (with_path) sub->add_option("--data", data_path_, "Dataset cache written by `effnas data`");
    sub->add_option("--dataset-kind", kind_, "quadrant-pattern or gaussian-blob (generated data)");
    sub->add_option("--train-samples", n_train_, "Generated training samples")->check(CLI::NonNegativeNumber);
    sub->add_option("--val-samples", n_val_, "Generated validation samples")->check(CLI::NonNegativeNumber);
    sub->add_option("--test-samples", n_test_, "Generated test samples")->check(CLI::NonNegativeNumber);
    sub->add_option("--noise", noise_level_, "Generated sample noise")->check(CLI::NonNegativeNumber);
  }

  void build() {
    app_.option_defaults()->always_capture_default();
    app_.require_subcommand(1);
    app_.set_help_all_flag("--help-all", "Help for every command");
    build_arch();
    build_lut();
    build_search();
    build_train();
    build_data();
  }

  void build_arch() {
    auto* arch = app_.add_subcommand("arch", "Inspect architecture specs");
    arch->require_subcommand(1);
    auto* show = arch->add_subcommand("show", "Print the stage layout");
    add_arch_source(show);
    show->add_flag("--json", json_, "Print the architecture as JSON");
    on(show, [this] { return arch_show(); }, "arch show");
    auto* validate = arch->add_subcommand("validate", "Check structural rules");
    add_arch_source(validate);
    on(validate, [this] { return arch_validate(); }, "arch validate");
    auto* count = arch->add_subcommand("count", "Parameters and MACs with a per-stage breakdown");
    add_arch_source(count);
    count->add_option("--resolution", resolution_, "Input side (defaults to the architecture's own)")->check(CLI::PositiveNumber);
    count->add_flag("--json", json_, "Machine-readable report");
    count->add_option("--out", out_path_, "Also write the JSON report here");
    on(count, [this] { return arch_count(); }, "arch count");
  }

  void build_lut() {
    auto* lut = app_.add_subcommand("lut", "Build and inspect latency tables");
    lut->require_subcommand(1);
    auto* b = lut->add_subcommand("build", "Benchmark the units a search space can reach");
    b->add_option("--out", out_path_, "Output CSV")->required();
    b->add_flag("--synthetic", synthetic_, "Use the deterministic cost model instead of timing");
    b->add_option("--preset", preset_, "Search space from a preset (default toy)");
    b->add_option("--space", space_path_, "Search space JSON");
    b->add_option("--kinds", kinds_, "Restrict to unit kinds (MB4D,MB3D,Embed,Stem,Head)");
    b->add_option("--widths", widths_, "Restrict to these output widths");
    b->add_option("--warmup", warmup_, "Warmup iterations per unit")->check(CLI::NonNegativeNumber);
    b->add_option("--measure", measure_, "Timed iterations per unit")->check(CLI::PositiveNumber);
    b->add_option("--repeat", repeat_, "Independent timing sets per unit")->check(CLI::PositiveNumber);
    b->add_option("--batch", batch_, "Batch size of the timed input")->check(CLI::PositiveNumber);
    on(b, [this] { return lut_build(); }, "lut build");
    auto* show = lut->add_subcommand("show", "Print a latency table");
    show->add_option("table", lut_path_, "Latency CSV")->required();
    on(show, [this] { return lut_show(); }, "lut show");
    auto* est = lut->add_subcommand("estimate", "Estimate an architecture's latency from a table");
    add_arch_source(est);
    est->add_option("--lut", lut_path_, "Latency CSV")->required();
    on(est, [this] { return lut_estimate(); }, "lut estimate");
  }

  void build_search() {
    auto* search = app_.add_subcommand("search", "Supernet training and latency-driven slimming");
    search->require_subcommand(1);
    auto* ts = search->add_subcommand("train-supernet", "Jointly train supernet weights and branch logits");
    ts->add_option("--preset", preset_, "Search space from a preset (default toy)");
    ts->add_option("--space", space_path_, "Search space JSON");
    add_data_options(ts, true);
    add_train_options(ts, supernet_epochs_);
    ts->add_option("--alpha-lr", alpha_lr_, "Learning rate of the branch logits")->check(CLI::PositiveNumber);
    ts->add_option("--gumbel-noise", noise_, "uniform, gumbel or none");
    ts->add_option("--seed", seed_, "Seed for weights, data order and noise");
    ts->add_option("--out", out_path_, "Output directory")->required();
    on(ts, [this] { return search_train(); }, "search train-supernet");

    auto* sl = search->add_subcommand("slim", "Greedy slimming to a latency target");
    sl->add_option("--supernet", supernet_path_, "Supernet checkpoint")->required();
    sl->add_option("--lut", lut_path_, "Latency CSV");
    sl->add_flag("--synthetic", synthetic_, "Use the deterministic cost model");
    sl->add_option("--target-ms", target_ms_, "Latency budget in milliseconds")->check(CLI::PositiveNumber);
    sl->add_option("--target-fraction", target_fraction_, "Budget as a fraction of the starting estimate")
        ->check(CLI::Range(0.0, 1.0));
    add_data_options(sl, true);
    sl->add_option("--evaluator", evaluator_, "Accuracy-drop source: supernet or proxy");
    sl->add_option("--importance", importance_, "Importance transform: softplus or raw");
    sl->add_option("--eval-tau", eval_tau_, "Mixing temperature during evaluation")->check(CLI::PositiveNumber);
    sl->add_option("--max-iters", max_iters_, "Step limit")->check(CLI::NonNegativeNumber);
    sl->add_option("--seed", seed_, "Seed of generated data");
    sl->add_option("--out", out_path_, "Output directory")->required();
    on(sl, [this] { return search_slim(); }, "search slim");
  }

  void build_train() {
    auto* tr = app_.add_subcommand("train", "Train an architecture from scratch");
    tr->add_option("--arch", spec_path_, "Architecture JSON file");
    tr->add_option("--preset", preset_, "Named preset");
    tr->add_option("--classes", classes_, "Override the class count")->check(CLI::PositiveNumber);
    add_data_options(tr, true);
    add_train_options(tr, train_epochs_);
    tr->add_option("--seed", seed_, "Seed for weights, data and order");
    tr->add_option("--out", out_path_, "Output directory")->required();
    on(tr, [this] { return train_cmd(); }, "train");

    auto* ev = app_.add_subcommand("eval", "Top-1 accuracy on one split");
    ev->add_option("--model", model_path_, "Trained model checkpoint");
    ev->add_option("--arch", spec_path_, "Architecture JSON file (fresh weights)");
    ev->add_option("--preset", preset_, "Named preset (fresh weights)");
    ev->add_option("--classes", classes_, "Override the class count")->check(CLI::PositiveNumber);
    add_data_options(ev, true);
    ev->add_option("--split", split_, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    ev->add_option("--seed", seed_, "Seed for fresh weights and generated data");
    ev->add_option("--out", out_path_, "Also write the JSON report here");
    on(ev, [this] { return eval_cmd(); }, "eval");
  }

  void build_data() {
    auto* d = app_.add_subcommand("data", "Generate a synthetic dataset cache");
    add_data_options(d, false);
    d->add_option("--classes", classes_, "Number of classes")->check(CLI::PositiveNumber);
    d->add_option("--resolution", resolution_, "Image side")->check(CLI::PositiveNumber);
    d->add_option("--seed", seed_, "Generator seed");
    d->add_option("--out", out_path_, "Output file")->required();
    on(d, [this] { return data_cmd(); }, "data");
  }

  // ---- commands -----------------------------------------------------------

  int arch_show() {
    const auto s = load_spec();
    out_ << (json_ ? arch::to_json(s) + "\n" : detail::show_text(s));
    return kOk;
  }

  int arch_validate() {
    const auto s = load_spec();
    const auto v = arch::validate(s);
    if (v.empty()) {
      out_ << "valid\n";
      return kOk;
    }
    out_ << v.size() << " violation(s)\n";
    for (const auto& x : v) out_ << "  " << arch::to_string(x) << "\n";
    return kFailure;
  }

  int arch_count() {
    const auto s = load_spec();
    arch::require_valid(s);
    const auto j = detail::count_json(s, resolution_ > 0 ? resolution_ : s.resolution);
    out_ << (json_ ? j.dump(2) + "\n" : detail::count_text(j));
    if (!out_path_.empty()) {
      write_text(out_path_, j.dump(2) + "\n");
      write_config_beside(out_path_);
    }
    return kOk;
  }

  int lut_build() {
    if (!space_path_.empty() && !preset_.empty()) throw UsageError("give either --space or --preset");
    const auto space = load_space();
    auto keys = lut::reachable_keys(space);
    const auto kinds = detail::split_list(kinds_);
    const auto widths = detail::split_list(widths_);
    std::set<lut::UnitKind> kind_set;
    for (const auto& k : kinds) kind_set.insert(lut::parse_unit_kind(k));
    std::set<std::int64_t> width_set;
    for (const auto& w : widths) {
      try {
        width_set.insert(std::stoll(w));
      } catch (const std::exception&) {
        throw UsageError("--widths expects integers, got '" + w + "'");
      }
    }
    std::erase_if(keys, [&](const lut::LatencyKey& k) {
      return (!kind_set.empty() && !kind_set.count(k.kind)) || (!width_set.empty() && !width_set.count(k.width));
    });
    if (keys.empty()) throw DomainError("the selected grid is empty");
    lut::BuildResult r;
    if (synthetic_) {
      r.table = lut::synthetic_table(keys, lut::mb3d_dims(space));
    } else {
      err_ << "benchmarking " << keys.size() << " units (" << lut::apply_bench_environment() << ")\n";
      r = lut::build_table(keys, {warmup_, measure_, batch_, repeat_}, search::bench_context(space));
    }
    for (const auto& e : r.errors) err_ << "warning: " << e << "\n";
    for (const auto& c : r.coarse) err_ << "warning: " << c << " is near the timer resolution\n";
    if (r.table.entries.empty()) throw DomainError("no unit could be benchmarked");
    lut::save_csv(r.table, out_path_);
    write_config_beside(out_path_);
    out_ << "wrote " << r.table.entries.size() << " of " << keys.size() << " entries to " << out_path_ << "\n";
    return r.errors.empty() ? kOk : kFailure;
  }

  int lut_show() {
    const auto load = lut::load_csv(lut_path_);
    for (const auto& w : load.warnings) err_ << "warning: " << w << "\n";
    out_ << "entries " << load.table.entries.size() << "\nfingerprint " << load.table.fingerprint << "\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-6s %6s %10s %6s %14s %12s\n", "kind", "width", "resolution", "exp", "median_ms",
                  "mad_ms");
    out_ << buf;
    for (const auto& [k, e] : load.table.entries) {
      std::snprintf(buf, sizeof buf, "%-6s %6lld %10lld %6lld %14.6f %12.6f\n", lut::to_string(k.kind),
                    static_cast<long long>(k.width), static_cast<long long>(k.resolution),
                    static_cast<long long>(k.exp), e.median_s * 1e3, e.mad_s * 1e3);
      out_ << buf;
    }
    return kOk;
  }

  int lut_estimate() {
    const auto s = load_spec();
    const auto load = lut::load_csv(lut_path_);
    for (const auto& w : load.warnings) err_ << "warning: " << w << "\n";
    char buf[200];
    for (const auto& t : lut::latency_terms(s)) {
      const auto* e = load.table.find(t.key);
      std::snprintf(buf, sizeof buf, "%-24s %-32s %s\n", t.where.c_str(), lut::to_string(t.key).c_str(),
                    e ? (lut::format_double(e->median_s * 1e3) + " ms").c_str() : "missing");
      out_ << buf;
    }
    out_ << "total " << lut::format_double(lut::estimate_latency(s, load.table) * 1e3) << " ms\n";
    return kOk;
  }

  int search_train() {
    if (!space_path_.empty() && !preset_.empty()) throw UsageError("give either --space or --preset");
    const auto space = load_space();
    auto data = load_data(space.classes, space.resolution);
    detail::ensure_dir(out_path_);
    write_config(out_path_);
    auto sn = supernet::SuperNet<float>::create(space, seed_);
    train::SupernetTrainConfig c;
    c.base = train_config(out_path_, "supernet.ckpt", supernet_epochs_);
    c.alpha_lr = alpha_lr_;
    c.noise = supernet::parse_noise(noise_);
    auto log = train::train_supernet(sn, data.train, c);
    arch::Json summary = {{"epochs", log.rows.size()},
                          {"final_loss", log.rows.back().loss},
                          {"final_train_top1", log.rows.back().top1},
                          {"alphas", sn.alphas()},
                          {"space", supernet::space_to_json(space)}};
    if (data.val.size() > 0) summary["val_top1"] = train::evaluate(sn, data.val);
    const auto text = summary.dump(2) + "\n";
    write_text(detail::join_path(out_path_, "summary.json"), text);
    out_ << text;
    return kOk;
  }

  int search_slim() {
    if (synthetic_ == !lut_path_.empty()) throw UsageError("give exactly one of --lut and --synthetic");
    auto sn = supernet::SuperNet<float>::from_checkpoint(load_checkpoint(supernet_path_));
    const auto& space = sn.space();
    lut::LatencyTable table;
    if (synthetic_) {
      table = lut::synthetic_table(lut::reachable_keys(space), lut::mb3d_dims(space));
    } else {
      auto load = lut::load_csv(lut_path_);
      for (const auto& w : load.warnings) err_ << "warning: " << w << "\n";
      table = std::move(load.table);
    }
    search::SlimRequest req;
    if (target_ms_ > 0) req.target_s = target_ms_ * 1e-3;
    req.target_fraction = target_fraction_;
    req.max_iters = max_iters_;
    req.eval_tau = eval_tau_;
    if (importance_ == "softplus") {
      req.transform = supernet::ImportanceTransform::softplus;
    } else if (importance_ == "raw") {
      req.transform = supernet::ImportanceTransform::raw;
    } else {
      throw UsageError("--importance must be softplus or raw");
    }
    detail::ensure_dir(out_path_);
    write_config(out_path_);
    search::SlimOutcome o;
    if (evaluator_ == "supernet") {
      auto data = load_data(space.classes, space.resolution);
      o = search::slim_supernet(sn, table, data.val, req);
    } else if (evaluator_ == "proxy") {
      const auto start = slim::SlimState::from_choice(sn.initial_choice());
      o.initial_spec = supernet::derive_arch(space, start.choice);
      const auto initial_ps = lut::estimate_latency_ps(o.initial_spec, table);
      o.target_s = req.target_s ? *req.target_s : req.target_fraction * static_cast<double>(initial_ps) * 1e-12;
      o.minimal_ps = search::minimal_estimate_ps(space, table);
      slim::ProxyEvaluator eval(space, sn.importance(req.transform, start.active()));
      slim::SlimConfig cfg{o.target_s, req.max_iters, req.transform};
      o.result = slim::run_slim(space, sn.alphas(), start, table, eval, cfg);
    } else {
      throw UsageError("--evaluator must be supernet or proxy");
    }
    const auto& r = o.result;
    write_text(detail::join_path(out_path_, "trace.jsonl"), slim::trace_jsonl(r, space));
    const auto table_text = slim::trace_table(r, space);
    write_text(detail::join_path(out_path_, "trace.txt"), table_text);
    arch::save_arch(detail::join_path(out_path_, "arch.json"), r.spec);
    const bool unreachable = o.minimal_ps > lut::to_ps(o.target_s);
    arch::Json summary = {{"initial_ms", r.initial_ps * 1e-9},
                          {"final_ms", r.final_ps * 1e-9},
                          {"target_ms", o.target_s * 1e3},
                          {"minimal_ms", o.minimal_ps * 1e-9},
                          {"reached", r.reached},
                          {"steps", r.trace.size()},
                          {"evaluator", evaluator_},
                          {"lut_fingerprint", table.fingerprint},
                          {"diagnostics", r.diagnostics},
                          {"arch", arch::to_json_value(r.spec)}};
    write_text(detail::join_path(out_path_, "summary.json"), summary.dump(2) + "\n");
    out_ << table_text << detail::show_text(r.spec);
    for (const auto& d : r.diagnostics) err_ << "note: " << d << "\n";
    if (unreachable) {
      err_ << "error: target " << o.target_s * 1e3 << " ms is unreachable; the minimal network estimates "
           << o.minimal_ps * 1e-9 << " ms\n";
      return kFailure;
    }
    return r.reached ? kOk : kFailure;
  }

  int train_cmd() {
    if (!spec_path_.empty() && !preset_.empty()) throw UsageError("give either --arch or --preset");
    const auto spec = load_spec();
    arch::require_valid(spec);
    auto data = load_data(spec.classes, spec.resolution);
    detail::ensure_dir(out_path_);
    write_config(out_path_);
    auto c = train_config(out_path_, "model.ckpt", train_epochs_);
    auto r = train::train_final(spec, data.train, c);
    arch::Json summary = {{"epochs", r.log.rows.size()}, {"final_loss", r.log.rows.back().loss}};
    if (data.val.size() > 0) summary["val_top1"] = train::evaluate(r.model, data.val);
    if (data.test.size() > 0) summary["test_top1"] = train::evaluate(r.model, data.test);
    const auto text = summary.dump(2) + "\n";
    write_text(detail::join_path(out_path_, "summary.json"), text);
    out_ << text;
    return kOk;
  }

  int eval_cmd() {
    const int sources = !model_path_.empty() + !spec_path_.empty() + !preset_.empty();
    if (sources != 1) throw UsageError("give exactly one of --model, --arch and --preset");
    auto m = model_path_.empty() ? arch::Model<float>::instantiate(load_spec(), seed_)
                                 : arch::Model<float>::from_checkpoint(load_checkpoint(model_path_));
    auto data = load_data(m.spec().classes, m.spec().resolution);
    const auto& split = split_ == "train" ? data.train : split_ == "val" ? data.val : data.test;
    const double top1 = train::evaluate(m, split);
    const arch::Json j = {{"split", split_},
                          {"samples", split.size()},
                          {"correct", static_cast<std::int64_t>(std::llround(top1 * static_cast<double>(split.size())))},
                          {"top1", top1}};
    out_ << j.dump() << "\n";
    if (!out_path_.empty()) {
      write_text(out_path_, j.dump(2) + "\n");
      write_config_beside(out_path_);
    }
    return kOk;
  }

  int data_cmd() {
    auto s = dataset_spec(classes_ > 0 ? classes_ : 4, resolution_ > 0 ? resolution_ : 64);
    const auto d = train::gen_synthetic(s);
    train::save_dataset(out_path_, d);
    write_config_beside(out_path_);
    out_ << train::dataset_spec_json(s).dump() << "\n";
    return kOk;
  }
};

/// Convenience entry point for `main` and in-process callers.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  App app(out, err);
  return app.run(args);
}

}  // namespace effnas::cli
