#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "dirgnn/errors.hpp"

using namespace dirgnn;

int main(int argc, char** argv) {
  cli::set_command_line(std::vector<std::string>(argv, argv + argc));
  CLI::App app{"Invariant rationale discovery for graph classification"};
  app.require_subcommand(1);

  cli::GenerateArgs gen;
  std::string gen_mode = "biased";
  auto* g = app.add_subcommand("generate", "Generate a Spurious-Motif dataset");
  g->add_option("--bias", gen.cfg.bias, "P(base = motif) in the training split")->check(CLI::Range(0.0, 1.0));
  g->add_option("--train", gen.cfg.n_train, "training graphs")->check(CLI::PositiveNumber);
  g->add_option("--val", gen.cfg.n_val, "validation graphs")->check(CLI::PositiveNumber);
  g->add_option("--test", gen.cfg.n_test, "test graphs")->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.cfg.seed, "master seed");
  g->add_option("--mode", gen_mode, "training dependency: biased, independent, latent")
      ->check(CLI::IsMember({"biased", "independent", "latent"}));
  g->add_option("--base-scale", gen.cfg.test_base_scale, "test base size multiplier (>= 1)")
      ->check(CLI::Range(1.0, 1e6));
  g->add_option("--base-size", gen.cfg.base_size, "target base node count");
  g->add_option("--dim", gen.cfg.feature_dim, "node feature width")->check(CLI::PositiveNumber);
  g->add_option("--out", gen.out, "output directory")->required();

  auto add_train_flags = [](CLI::App* c, cli::TrainArgs& t, std::string& mode, std::string& opt) {
    c->add_option("--data", t.data, "dataset directory")->required();
    c->add_option("--mode", mode, "dir, dir-var, erm, attn")->check(CLI::IsMember({"dir", "dir-var", "erm", "attn"}));
    c->add_option("--lambda", t.cfg.lambda, "variance penalty weight")->check(CLI::NonNegativeNumber);
    c->add_option("--r", t.cfg.r, "causal edge ratio in (0,1)")->check(CLI::Range(1e-9, 1.0 - 1e-9));
    c->add_option("--lr", t.cfg.lr, "learning rate")->check(CLI::PositiveNumber);
    c->add_option("--optimizer", opt, "adam or sgd")->check(CLI::IsMember({"adam", "sgd"}));
    c->add_option("--batch", t.cfg.batch_size, "batch size")->check(CLI::PositiveNumber);
    c->add_option("--epochs", t.cfg.max_epochs, "maximum epochs")->check(CLI::PositiveNumber);
    c->add_option("--patience", t.cfg.patience, "early-stopping patience");
    c->add_option("--k", t.cfg.k, "precision@k")->check(CLI::PositiveNumber);
    c->add_option("--seed", t.cfg.seed, "run seed");
    c->add_option("--out", t.out, "output directory")->required();
  };

  cli::TrainArgs tr;
  std::string tr_mode = "dir", tr_opt = "adam";
  auto* t = app.add_subcommand("train", "Train a model");
  add_train_flags(t, tr, tr_mode, tr_opt);

  cli::EvalArgs ev;
  std::size_t ev_k = 0;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--checkpoint", ev.checkpoint, "training output or checkpoint directory")->required();
  e->add_option("--data", ev.data, "dataset directory")->required();
  auto* kopt = e->add_option("--k", ev_k, "precision@k (default: training k)")->check(CLI::PositiveNumber);
  e->add_option("--out", ev.out, "output directory");

  cli::SweepArgs sw;
  std::string sw_mode = "dir", sw_opt = "adam", sw_lambdas = "0,0.001,0.01,0.1,1,10";
  auto* s = app.add_subcommand("sweep", "Lambda sensitivity sweep of DIR");
  add_train_flags(s, sw.base, sw_mode, sw_opt);
  s->add_option("--lambdas", sw_lambdas, "comma-separated lambda grid");
  s->add_option("--seeds", sw.seeds, "seeds per lambda")->check(CLI::PositiveNumber);

  cli::ExportArgs ex;
  std::string ex_ids;
  auto* x = app.add_subcommand("export", "Export rationales as JSON or DOT");
  x->add_option("--checkpoint", ex.checkpoint, "training output or checkpoint directory")->required();
  x->add_option("--data", ex.data, "dataset directory")->required();
  auto* ids_opt = x->add_option("--ids", ex_ids, "comma-separated graph ids");
  auto* split_opt = x->add_option("--split", ex.split, "export a whole split")->check(CLI::IsMember({"train", "val", "test"}));
  ids_opt->excludes(split_opt);
  x->add_option("--format", ex.format, "json or dot")->check(CLI::IsMember({"json", "dot"}));
  x->add_option("--out", ex.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return cli::kUsage;
  }

  auto split_list = [](const std::string& text, auto parse) {
    std::vector<decltype(parse(std::string{}))> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(parse(item));
    }
    return out;
  };

  try {
    if (*g) {
      gen.cfg.mode = *motif::parse_mode(gen_mode);
      return cli::cmd_generate(gen);
    }
    if (*t) {
      tr.cfg.mode = *train::parse_mode(tr_mode);
      tr.cfg.optimizer = tr_opt == "sgd" ? optim::Kind::Sgd : optim::Kind::Adam;
      return cli::cmd_train(tr);
    }
    if (*e) {
      if (*kopt) ev.k = ev_k;
      return cli::cmd_eval(ev);
    }
    if (*s) {
      sw.base.cfg.mode = *train::parse_mode(sw_mode);
      sw.base.cfg.optimizer = sw_opt == "sgd" ? optim::Kind::Sgd : optim::Kind::Adam;
      try {
        sw.lambdas = split_list(sw_lambdas, [](const std::string& v) { return std::stod(v); });
      } catch (const std::exception&) {
        std::cerr << "--lambdas: not a comma-separated list of numbers\n";
        return cli::kUsage;
      }
      return cli::cmd_sweep(sw);
    }
    if (*x) {
      if (ex_ids.empty() && ex.split.empty()) {
        std::cerr << "export: one of --ids or --split is required\n";
        return cli::kUsage;
      }
      try {
        ex.ids = split_list(ex_ids, [](const std::string& v) { return static_cast<std::int64_t>(std::stoll(v)); });
      } catch (const std::exception&) {
        std::cerr << "--ids: not a comma-separated list of integers\n";
        return cli::kUsage;
      }
      return cli::cmd_export(ex);
    }
  } catch (const cli::CommandError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return err.code();
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return cli::kUsage;
}
