// autopasta: batch command-line front end.
//
//   autopasta run     --dataset FILE --method direct|iterative|autopasta [--head-set FILE]
//   autopasta profile --dataset FILE --strategy greedy|group|coarse-to-fine
//   autopasta compare --dataset FILE --head-set FILE
//
// Settings come from defaults, then --config FILE (JSON), then flags.

#include "app.hpp"

#include <autopasta/error.hpp>

#include <CLI11.hpp>

#include <functional>
#include <iostream>

int main(int argc, char** argv) {
  CLI::App cli{"Automatic attention steering for open-book QA"};
  cli.require_subcommand(1);
  cli.fallthrough();

  nlohmann::json overrides = nlohmann::json::object();
  std::vector<std::function<void()>> collect;
  auto flag = [&](const std::string& name, const std::string& key, auto& var,
                  const std::string& help) {
    CLI::Option* opt = cli.add_option(name, var, help);
    collect.push_back([&overrides, opt, key, &var] {
      if (opt->count() > 0) overrides[key] = var;
    });
    return opt;
  };

  std::string config_file;
  cli.add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);

  std::string dataset, checkpoint, method, head_set, head_set_domain, embedding, embedding_file,
      templates, output, strategy;
  std::uint64_t model_seed = 0, split_seed = 0;
  int layers = 0, heads = 0, model_dim = 0, vocab_size = 0, max_seq = 0, max_new_tokens = 0,
      id_margin = 0, embedding_dim = 0, workers = 0, top_k = 0, group_size = 0, k_groups = 0;
  std::size_t profiling_count = 0, max_profile_instances = 0;
  double delta = 0.0;
  std::vector<int> grid_l, grid_top_i, grid_top_j;

  flag("--dataset", "dataset", dataset, "Line-delimited JSON dataset");
  flag("--checkpoint", "checkpoint", checkpoint, "Checkpoint manifest (default: seeded toy model)");
  flag("--model-seed", "model_seed", model_seed, "Seed for random toy weights");
  flag("--layers", "layers", layers, "Toy model layers");
  flag("--heads", "heads", heads, "Toy model heads per layer");
  flag("--model-dim", "model_dim", model_dim, "Toy model width");
  flag("--vocab-size", "vocab_size", vocab_size, "Toy model vocabulary size");
  flag("--max-seq-len", "max_sequence_length", max_seq, "Toy model context window");
  flag("--method", "method", method, "direct | iterative | autopasta");
  flag("--head-set", "head_set", head_set, "Head-set file ([[layer, head], ...])");
  flag("--head-set-domain", "head_set_domain", head_set_domain,
       "Provenance label for the head set (in-domain | out-of-domain)");
  flag("--delta", "delta", delta, "Attention bias magnitude (default log 100)");
  flag("--max-new-tokens", "max_new_tokens", max_new_tokens, "Answer length budget");
  flag("--identification-margin", "identification_margin", id_margin,
       "Extra tokens beyond the longest sentence for key-sentence generation");
  flag("--embedding", "embedding", embedding, "hashed | file");
  flag("--embedding-file", "embedding_file", embedding_file, "Precomputed embeddings (JSONL)");
  flag("--embedding-dim", "embedding_dim", embedding_dim, "Hashed embedding dimension");
  flag("--templates", "template_dir", templates, "Directory with prompt template overrides");
  flag("--output", "output_dir", output, "Output directory");
  flag("--workers", "workers", workers, "Worker threads");
  flag("--profiling-count", "profiling_count", profiling_count, "Profiling split size");
  flag("--split-seed", "split_seed", split_seed, "Seed for the profiling/test split");
  flag("--strategy", "strategy", strategy, "greedy | group | coarse-to-fine");
  flag("--grid-l", "grid_l", grid_l, "Candidate top-l layer counts");
  flag("--top-i", "grid_top_i", grid_top_i, "Candidate heads-per-layer counts");
  flag("--top-j", "grid_top_j", grid_top_j, "Candidate pooled head counts");
  flag("--top-k", "top_k", top_k, "Heads kept by greedy search");
  flag("--group-size", "group_size", group_size, "Heads per group for group search");
  flag("--k-groups", "k_groups", k_groups, "Groups kept by group search");
  flag("--max-profile-instances", "max_profile_instances", max_profile_instances,
       "Cap on profiling instances per candidate (0: all)");
  bool hop_restricted = false, snapshots = false;
  CLI::Option* hop_opt = cli.add_flag("--hop-restricted", hop_restricted,
                                      "Show each hop's identification prompt only its passages");
  CLI::Option* snap_opt =
      cli.add_flag("--snapshots", snapshots, "Record attention mass on the highlight per instance");

  CLI::App* run = cli.add_subcommand("run", "Run one method over the test split");
  CLI::App* prof = cli.add_subcommand("profile", "Search a head set on the profiling split");
  CLI::App* cmp = cli.add_subcommand("compare", "Run all three methods and tabulate");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e);
  }
  for (auto& c : collect) c();
  if (hop_opt->count() > 0) overrides["hop_restricted_identification"] = hop_restricted;
  if (snap_opt->count() > 0) overrides["snapshots"] = snapshots;

  try {
    const auto config = autopasta::app::resolve_config(
        config_file.empty() ? std::nullopt : std::optional<std::filesystem::path>(config_file),
        overrides);
    if (run->parsed()) {
      const auto out = autopasta::app::cmd_run(config, std::cout);
      std::cout << "wrote " << out.path.string() << "\n";
    } else if (prof->parsed()) {
      const auto out = autopasta::app::cmd_profile(config, std::cout);
      std::cout << "wrote " << out.report_path.string() << " and " << out.head_set_path.string()
                << "\n";
    } else if (cmp->parsed()) {
      const auto table = autopasta::app::cmd_compare(config, std::cout);
      std::cout << table.to_markdown();
    }
  } catch (const autopasta::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
