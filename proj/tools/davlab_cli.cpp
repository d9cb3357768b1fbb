// davlab: pretrain | align | eval | oracle | ablate

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "davlab/errors.hpp"
#include "davlab/experiment.hpp"

namespace {

using namespace davlab;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* app, Common& c, bool need_config = true) {
  auto* opt = app->add_option("--config", c.config, "experiment config (JSON)");
  if (need_config) opt->required()->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "overrides the config seed");
  app->add_option("--out", c.out, "output directory");
}

config::ExperimentConfig load(const Common& c) {
  auto cfg = config::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void print_eval(const exp::EvalResult& r) {
  std::printf("samples %d\n", r.samples);
  std::printf("amortized mean_reward %.6f std %.6f\n", r.amortized_mean_reward, r.amortized_reward_std);
  std::printf("posterior mean_reward %.6f std %.6f\n", r.posterior_mean_reward, r.posterior_reward_std);
  if (r.samples >= 2) std::printf("diversity %.6f\n", r.diversity);
  if (!std::isnan(r.mode_coverage)) std::printf("mode_coverage %.6f\n", r.mode_coverage);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diffusion alignment as variational EM"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "per-epoch progress on stderr");

  Common pre_c, align_c, oracle_c, ablate_c;
  std::string resume;
  auto* pre = app.add_subcommand("pretrain", "train the discrete denoiser and save it");
  add_common(pre, pre_c);

  auto* align = app.add_subcommand("align", "run the EM alignment loop");
  add_common(align, align_c);
  align->add_option("--resume", resume, "resume from a run checkpoint")->check(CLI::ExistingFile);

  std::string ckpt_path;
  int n = 256;
  std::uint64_t eval_seed = 0;
  std::string eval_out;
  auto* ev = app.add_subcommand("eval", "sample a checkpoint in amortized and posterior mode");
  ev->add_option("--checkpoint", ckpt_path, "run checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--n", n, "samples per mode")->check(CLI::PositiveNumber);
  ev->add_option("--seed", eval_seed, "sampling seed");
  ev->add_option("--out", eval_out, "output directory");

  exp::OracleOptions oopts;
  auto* orc = app.add_subcommand("oracle", "exact-enumeration checks on a tiny discrete instance");
  add_common(orc, oracle_c);
  orc->add_flag("--corrupt", oopts.corrupt_table, "perturb one value-table entry (negative control)");
  orc->add_option("--repeats", oopts.repeats, "E-step repeats per particle count");

  std::vector<std::string> variants{"dav", "search_and_distill", "reweight"};
  auto* abl = app.add_subcommand("ablate", "run E-step variants on the same world, seeds and budgets");
  add_common(abl, ablate_c);
  abl->add_option("--variants", variants, "algorithms to run")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*pre) {
      const auto cfg = load(pre_c);
      const auto rep = exp::run_pretrain(cfg, pre_c.out);
      std::printf("pretrain epochs %d (%s expectation)\n", rep.epochs, rep.exact ? "exact" : "sampled");
      std::printf("train loss %.6f -> %.6f\n", rep.train_loss_before, rep.train_loss_after);
      std::printf("heldout loss %.6f -> %.6f\n", rep.heldout_loss_before, rep.heldout_loss_after);
    } else if (*align) {
      const auto cfg = load(align_c);
      exp::RunOptions ro;
      ro.out_dir = align_c.out;
      ro.resume = resume;
      ro.verbose = verbose;
      const auto res = exp::run_align(cfg, ro);
      std::fputs(res.csv.c_str(), stdout);
    } else if (*ev) {
      print_eval(exp::run_eval(ckpt_path, n, eval_seed, eval_out));
    } else if (*orc) {
      const auto cfg = load(oracle_c);
      const auto rep = exp::run_oracle(cfg, oopts, oracle_c.out);
      std::fputs(rep.text().c_str(), stdout);
      return rep.ok() ? 0 : 1;
    } else if (*abl) {
      const auto cfg = load(ablate_c);
      for (const auto& v : variants) {
        exp::RunOptions ro;
        ro.verbose = verbose;
        if (!ablate_c.out.empty()) ro.out_dir = (std::filesystem::path(ablate_c.out) / v).string();
        const auto res = exp::run_ablation(config::algorithm_from_string(v), cfg, ro);
        const auto& last = res.records.back();
        std::printf("%-20s final elbo %.6f mean_reward %.6f posterior_mean_reward %.6f\n", v.c_str(), last.elbo,
                    last.mean_reward, last.posterior_mean_reward);
      }
    }
  } catch (const davlab::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
