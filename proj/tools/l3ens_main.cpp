#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "l3ens/config.hpp"
#include "l3ens/embedding_store.hpp"
#include "l3ens/experiment.hpp"
#include "l3ens/io.hpp"
#include "l3ens/reporting.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("l3ens");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("L3ENS_LOG")) {
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to "off"; only honor it when asked for.
    if (level != spdlog::level::off || std::string(env) == "off") spdlog::set_level(level);
    else spdlog::warn("ignoring unknown L3ENS_LOG level '{}'", env);
  }
}

int report_config_error(const l3ens::ConfigError& e) {
  spdlog::error("{}", e.what());
  return kExitConfig;
}

int cmd_validate(const std::string& path) {
  const auto cfg = l3ens::load_config(path);
  std::cout << "config ok: " << cfg.experiment_id << " (" << cfg.datasets.size() << " datasets, "
            << cfg.sources.size() << " sources, " << cfg.sequences.size() << " sequences, "
            << cfg.ensembles.size() << " ensembles)\ndigest " << cfg.digest << "\n";
  return kExitOk;
}

int cmd_run(const std::string& path, const std::optional<std::string>& out, std::size_t seeds) {
  const auto cfg = l3ens::load_config(path);
  l3ens::RunOptions opts;
  if (out) opts.output_dir = fs::path(*out);
  opts.seeds = seeds;
  const auto runs = l3ens::run_experiments(cfg, opts, [](const std::string& msg) { spdlog::info("{}", msg); });
  int code = kExitOk;
  for (const auto& r : runs) {
    const auto dir = l3ens::run_directory(cfg, opts, r.seed);
    if (r.ok()) {
      std::cout << "seed " << r.seed << ": results in " << dir.string() << "\n";
    } else {
      spdlog::error("seed {}: {}", r.seed, r.failure->message);
      std::cout << "seed " << r.seed << ": FAILED in phase " << r.failure->phase << "; partial results in "
                << dir.string() << "\n";
      code = kExitRuntime;
    }
  }
  return code;
}

int cmd_encode(const std::string& input, std::size_t dim, std::uint64_t seed, const std::string& out) {
  std::ifstream in(input);
  if (!in) throw l3ens::Error(l3ens::ErrorCode::IoFailure, "cannot open " + input);
  std::vector<std::string> ids, texts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = input + ":" + std::to_string(lineno);
    try {
      const auto rec = nlohmann::json::parse(line);
      ids.push_back(rec.at("id").get<std::string>());
      if (rec.contains("text")) {
        texts.push_back(rec.at("text").get<std::string>());
      } else {
        texts.push_back(rec.at("text_a").get<std::string>() + " " + rec.at("text_b").get<std::string>());
      }
    } catch (const nlohmann::json::exception& e) {
      throw l3ens::Error(l3ens::ErrorCode::ParseError, where + ": " + e.what());
    }
  }
  const auto m = l3ens::hash_encode(texts, dim, seed, ids);
  l3ens::store_embeddings(m, out, {fs::path(input).stem().string(), "all"});
  std::cout << "wrote " << m.count() << " x " << m.dim() << " embeddings to " << out << "\n";
  return kExitOk;
}

int cmd_report(const std::string& run_json, const std::optional<std::string>& out) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(l3ens::io::read_text(run_json));
  } catch (const nlohmann::json::parse_error& e) {
    throw l3ens::Error(l3ens::ErrorCode::ParseError, run_json + ": " + e.what());
  }
  const auto run = l3ens::run_result_from_json(j);
  const fs::path dir = out ? fs::path(*out) : fs::path(run_json).parent_path();
  if (out) l3ens::write_reports(run, dir);
  std::cout << "# " << run.experiment_id << " (seed " << run.seed << ", " << (run.ok() ? "ok" : "failed") << ")\n\n";
  std::cout << "## Knowledge transfer\n\n" << l3ens::render_markdown(l3ens::emit_transfer_table(run)) << "\n";
  std::cout << "## Ensemble strategies\n\n" << l3ens::render_markdown(l3ens::emit_strategy_table(run));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Lifelong-learning experiment engine"};
  app.require_subcommand(1);

  std::string config_path;
  auto* validate = app.add_subcommand("validate", "Check a config and report every violation");
  validate->add_option("config", config_path, "Experiment config (JSON)")->required();

  std::optional<std::string> out_dir;
  std::size_t seeds = 1;
  auto* run = app.add_subcommand("run", "Run an experiment");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--out", out_dir, "Output root (default: the config's output_dir)");
  run->add_option("--seeds", seeds, "Number of seeds to sweep: seed, seed+1, ...")->check(CLI::PositiveNumber);

  std::string input, emb_out;
  std::size_t dim = 0;
  std::uint64_t seed = 0;
  auto* encode = app.add_subcommand("encode", "Hash-encode a JSONL text file into an embedding file");
  encode->add_option("--input", input, "JSONL with id and text (or text_a/text_b)")->required();
  encode->add_option("--dim", dim, "Embedding dimension")->required()->check(CLI::PositiveNumber);
  encode->add_option("--seed", seed, "Hash seed")->required();
  encode->add_option("--out", emb_out, "Output .l3em path")->required();

  std::string run_json;
  std::optional<std::string> report_out;
  auto* report = app.add_subcommand("report", "Rebuild tables from a run.json");
  report->add_option("run_json", run_json, "Path to run.json")->required();
  report->add_option("--out", report_out, "Write the table files into this directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*validate) return cmd_validate(config_path);
    if (*run) return cmd_run(config_path, out_dir, seeds);
    if (*encode) return cmd_encode(input, dim, seed, emb_out);
    if (*report) return cmd_report(run_json, report_out);
  } catch (const l3ens::ConfigError& e) {
    return report_config_error(e);
  } catch (const l3ens::Error& e) {
    spdlog::error("{}", e.what());
    return e.code() == l3ens::ErrorCode::IoFailure && *validate ? kExitConfig : kExitRuntime;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitRuntime;
  }
  return kExitRuntime;
}
