// mialab: command-line front end for corpus generation, model training,
// sampling, attacks and the experiment matrix.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mialab/attack/attack.hpp"
#include "mialab/error.hpp"
#include "mialab/experiments/experiments.hpp"
#include "mialab/fsutil.hpp"
#include "mialab/ldm/diffusion.hpp"
#include "mialab/metrics/auc.hpp"
#include "mialab/metrics/features.hpp"
#include "mialab/rng.hpp"
#include "mialab/synthdata/corpus.hpp"
#include "mialab/synthdata/manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mialab;

namespace {

struct Globals {
  std::string workspace = "ws";
  uint64_t seed = 1;
  std::string scale = "desk";
  int workers = 1;
  bool json_out = false;
  bool quiet = false;
};

std::ostringstream g_sink;

exp::RunConfig run_config(const Globals& g) {
  exp::RunConfig rc;
  rc.workspace = g.workspace;
  rc.seed = g.seed;
  rc.scale = exp::Scale::by_name(g.scale);
  rc.workers = g.workers;
  rc.log = g.quiet ? &g_sink : &std::cerr;
  return rc;
}

synth::DatasetManifest load_manifest(const std::string& path) {
  fs::path p = path;
  if (fs::is_directory(p)) p /= "manifest.jsonl";
  return synth::read_manifest(p);
}

void print_result(const exp::ExperimentResult& r, bool as_json) {
  if (as_json) {
    std::cout << r.to_json().dump(2) << "\n";
    return;
  }
  std::cout << exp::results_markdown({r});
}

std::vector<double> parse_scales(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      fail(ErrorKind::kConfig, "bad guidance scale '" + item + "'");
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Membership inference experiments on desk-scale latent diffusion models"};
  app.require_subcommand(1);
  Globals g;
  if (const char* ws = std::getenv("MIALAB_WORKSPACE")) g.workspace = ws;
  app.add_option("--workspace", g.workspace, "Workspace directory (env MIALAB_WORKSPACE)")->capture_default_str();
  app.add_option("--seed", g.seed, "Global seed")->capture_default_str();
  app.add_option("--scale", g.scale, "Scale preset: desk or smoke")->capture_default_str();
  app.add_option("--workers", g.workers, "Parallel experiment rows")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--json", g.json_out, "Machine-readable output");
  app.add_flag("-q,--quiet", g.quiet, "Suppress progress and cache lines");
  // Globals are accepted after the subcommand name too.
  app.fallthrough();

  std::function<void()> action;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a procedural face corpus");
  std::string inst = "A", out_dir;
  int count = 1000, size = 32;
  gen->add_option("--inst", inst, "Institution style: A, B or wild")->capture_default_str();
  gen->add_option("--count", count, "Number of images")->capture_default_str();
  gen->add_option("--size", size, "Image height and width")->capture_default_str();
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->callback([&] {
    action = [&] {
      auto m = synth::gen_corpus(synth::CorpusSpec::make(synth::parse_institution(inst), count, g.seed, size), out_dir);
      if (g.json_out) std::cout << json{{"images", m.size()}, {"manifest", (fs::path(out_dir) / "manifest.jsonl").string()}}.dump() << "\n";
      else std::cout << "wrote " << m.size() << " images to " << out_dir << "\n";
    };
  });

  // train-base
  auto* tb = app.add_subcommand("train-base", "Train the autoencoder and base denoiser on a captioned corpus");
  std::string data, out_ckpt, config_path;
  int epochs = -1, ae_epochs = -1;
  tb->add_option("--data", data, "Training manifest (file or directory)")->required();
  tb->add_option("--out", out_ckpt, "Checkpoint path")->required();
  tb->add_option("--config", config_path, "Diffusion config JSON (defaults from --scale)");
  tb->add_option("--epochs", epochs, "Denoiser epochs (default from config)");
  tb->add_option("--ae-epochs", ae_epochs, "Autoencoder epochs (default from config)");
  tb->callback([&] {
    action = [&] {
      auto cfg = exp::Scale::by_name(g.scale).base;
      if (!config_path.empty()) cfg = ldm::DiffusionConfig::from_json(json::parse(read_file(config_path)));
      if (epochs >= 0) cfg.epochs = epochs;
      if (ae_epochs >= 0) cfg.ae_epochs = ae_epochs;
      cfg.seed = g.seed;
      auto ck = ldm::train_base(load_manifest(data), cfg);
      ck.save(out_ckpt);
      std::cout << "saved " << out_ckpt << " checksum " << ck.checksum() << "\n";
    };
  });

  // finetune
  auto* ft = app.add_subcommand("finetune", "Fine-tune a base checkpoint on a target corpus");
  std::string base_ckpt;
  ldm::FinetuneOptions fo;
  bool lenient = false;
  ft->add_option("--base", base_ckpt, "Base checkpoint")->required();
  ft->add_option("--data", data, "Target manifest")->required();
  ft->add_option("--out", out_ckpt, "Output checkpoint")->required();
  ft->add_option("--epochs", fo.epochs, "Epochs")->capture_default_str();
  ft->add_option("--lr", fo.lr, "Learning rate")->capture_default_str();
  ft->add_option("--batch-size", fo.batch_size, "Batch size")->capture_default_str();
  ft->add_option("--caption-dropout", fo.caption_dropout, "Caption dropout probability")->capture_default_str();
  ft->add_flag("--allow-mixed-prefix", lenient, "Warn instead of failing on mixed caption prefixes");
  ft->callback([&] {
    action = [&] {
      fo.seed = g.seed;
      fo.strict_prefix = !lenient;
      fo.source_id = data;
      auto ck = ldm::finetune(ldm::DiffusionCheckpoint::load(base_ckpt), load_manifest(data), fo);
      ck.save(out_ckpt);
      std::cout << "saved " << out_ckpt << " checksum " << ck.checksum() << "\n";
    };
  });

  // sample
  auto* sp = app.add_subcommand("sample", "Generate images from a checkpoint with classifier-free guidance");
  std::string model, prefix = "gen";
  ldm::SampleRequest req;
  req.count = 250;
  sp->add_option("--model", model, "Diffusion checkpoint")->required();
  sp->add_option("--prompt", req.prompt, "Prompt text")->required();
  sp->add_option("--count", req.count, "Number of images")->capture_default_str();
  sp->add_option("--steps", req.steps, "Sampling steps")->capture_default_str();
  sp->add_option("--guidance", req.guidance_scale, "Guidance scale")->capture_default_str();
  sp->add_option("--prefix", prefix, "Image id prefix")->capture_default_str();
  sp->add_option("--out", out_dir, "Output directory")->required();
  sp->callback([&] {
    action = [&] {
      req.seed = g.seed;
      auto m = ldm::sample_to_dir(ldm::DiffusionCheckpoint::load(model), req, out_dir, prefix, prefix);
      std::cout << "wrote " << m.size() << " images to " << out_dir << "\n";
    };
  });

  // train-attack
  auto* ta = app.add_subcommand("train-attack", "Train the membership classifier");
  std::string pos, neg;
  attack::AttackConfig ac;
  ta->add_option("--pos", pos, "Positive (member-like) manifest")->required();
  ta->add_option("--neg", neg, "Negative manifest")->required();
  ta->add_option("--out", out_ckpt, "Output checkpoint")->required();
  ta->add_option("--epochs", ac.epochs, "Epochs")->capture_default_str();
  ta->add_option("--batch-size", ac.batch_size, "Batch size")->capture_default_str();
  ta->add_option("--lr", ac.lr, "Learning rate")->capture_default_str();
  ta->add_option("--val-fraction", ac.val_fraction, "Validation fraction")->capture_default_str();
  ta->add_option("--min-per-class", ac.min_per_class, "Minimum images per class")->capture_default_str();
  ta->callback([&] {
    action = [&] {
      auto ck = attack::train_attack({load_manifest(pos), load_manifest(neg), g.seed}, ac);
      ck.save(out_ckpt);
      if (g.json_out)
        std::cout << json{{"best_epoch", ck.best_epoch}, {"val_loss", ck.val_loss}, {"val_accuracy", ck.val_accuracy}}.dump() << "\n";
      else
        std::cout << "saved " << out_ckpt << " best epoch " << ck.best_epoch << " val loss " << ck.val_loss << " val acc " << ck.val_accuracy
                  << "\n";
    };
  });

  // score
  auto* sc = app.add_subcommand("score", "Score images with an attack checkpoint");
  std::string attack_ckpt, scores_out;
  sc->add_option("--attack", attack_ckpt, "Attack checkpoint")->required();
  sc->add_option("--pos", pos, "Manifest of members (member=true)");
  sc->add_option("--neg", neg, "Manifest of non-members (member=false)");
  sc->add_option("--out", scores_out, "Output JSONL (stdout when omitted)");
  sc->callback([&] {
    action = [&] {
      require(!pos.empty() || !neg.empty(), ErrorKind::kConfig, "score needs --pos and/or --neg");
      auto ck = attack::AttackCheckpoint::load(attack_ckpt);
      std::string lines;
      for (auto [path, member] : {std::pair{pos, true}, std::pair{neg, false}}) {
        if (path.empty()) continue;
        auto m = load_manifest(path);
        auto ps = attack::predict_batch(ck, m.load_images());
        for (size_t i = 0; i < ps.size(); ++i) lines += json{{"image_id", m.records[i].image_id}, {"p", ps[i]}, {"member", member}}.dump() + "\n";
      }
      if (scores_out.empty()) std::cout << lines;
      else write_file_atomic(scores_out, lines);
    };
  });

  // eval-auc
  auto* ea = app.add_subcommand("eval-auc", "ROC AUC of a scores JSONL file (fields p, member)");
  std::string scores_in;
  ea->add_option("scores", scores_in, "Scores JSONL")->required();
  ea->callback([&] {
    action = [&] {
      std::vector<metrics::ScoredLabel> sl;
      std::istringstream in(read_file(scores_in));
      std::string line;
      int lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
          auto j = json::parse(line);
          sl.push_back({j.at("p").get<double>(), j.at("member").get<bool>()});
        } catch (const json::exception& e) {
          fail(ErrorKind::kData, scores_in + ":" + std::to_string(lineno) + ": " + e.what());
        }
      }
      const double auc = metrics::roc_auc(sl);
      const auto n_pos = std::count_if(sl.begin(), sl.end(), [](const metrics::ScoredLabel& s) { return s.member; });
      const auto n_neg = static_cast<long>(sl.size()) - n_pos;
      if (g.json_out) std::cout << json{{"auc", auc}, {"n_pos", n_pos}, {"n_neg", n_neg}}.dump() << "\n";
      else std::cout << "auc " << auc << " (" << n_pos << " members, " << n_neg << " non-members)\n";
    };
  });

  // fid
  auto* fd = app.add_subcommand("fid", "Frechet distance between two image sets in the fixed random feature space");
  std::string set_a, set_b;
  fd->add_option("a", set_a, "First manifest")->required();
  fd->add_option("b", set_b, "Second manifest")->required();
  fd->callback([&] {
    action = [&] {
      metrics::RandomEmbedder phi(derive_seed(g.seed, "embedder"));
      auto a = metrics::feature_stats(phi.embed(load_manifest(set_a).load_images()));
      auto b = metrics::feature_stats(phi.embed(load_manifest(set_b).load_images()));
      const double v = metrics::fid(a, b);
      if (g.json_out) std::cout << json{{"fid", v}}.dump() << "\n";
      else std::cout << "fid " << v << "\n";
    };
  });

  // run-experiment
  auto* re = app.add_subcommand("run-experiment", "Run one experiment spec");
  std::string spec_path;
  re->add_option("spec", spec_path, "Experiment spec JSON")->required();
  re->callback([&] {
    action = [&] {
      auto spec = exp::ExperimentSpec::load(spec_path);
      exp::Lab lab(run_config(g));
      auto r = exp::run_experiment(lab, spec);
      const auto dir = lab.workspace() / "reports" / ("row-" + spec.id);
      ensure_dir(dir);
      write_file_atomic(dir / "result.json", r.to_json().dump(2) + "\n");
      print_result(r, g.json_out);
    };
  });

  // run-matrix
  auto* rm = app.add_subcommand("run-matrix", "Run every experiment spec and write the results table");
  std::string specs_dir = "experiments/table3", report_dir;
  rm->add_option("--specs", specs_dir, "Spec file or directory")->capture_default_str();
  rm->add_option("--out", report_dir, "Report directory (default <workspace>/reports)");
  rm->callback([&] {
    action = [&] {
      auto specs = exp::load_specs(specs_dir);
      exp::Lab lab(run_config(g));
      auto rep = exp::run_matrix(lab, specs, report_dir.empty() ? lab.workspace() / "reports" : fs::path(report_dir));
      if (g.json_out) {
        json j = json::array();
        for (const auto& r : rep.rows) j.push_back(r.to_json());
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << exp::results_markdown(rep.rows);
      }
      for (const auto& r : rep.rows)
        if (!r.ok()) throw Error(ErrorKind::kTraining, "row " + r.id + " failed");
    };
  });

  // sweep
  auto* sw = app.add_subcommand("sweep", "Guidance-scale sweep for one spec");
  std::string scales_text = "0,4,8,12,16";
  sw->add_option("spec", spec_path, "Base experiment spec JSON")->required();
  sw->add_option("--scales", scales_text, "Comma-separated guidance scales")->capture_default_str();
  sw->add_option("--out", report_dir, "Report directory (default <workspace>/reports)");
  sw->callback([&] {
    action = [&] {
      auto spec = exp::ExperimentSpec::load(spec_path);
      exp::Lab lab(run_config(g));
      auto r = exp::guidance_sweep(lab, spec, parse_scales(scales_text));
      const fs::path dir = report_dir.empty() ? lab.workspace() / "reports" : fs::path(report_dir);
      ensure_dir(dir);
      write_file_atomic(dir / "sweep.csv", exp::sweep_csv(r));
      if (g.json_out) std::cout << r.to_json().dump(2) << "\n";
      else std::cout << exp::sweep_csv(r) << "spearman(auc,fid) "
                     << (r.sweep_spearman ? std::to_string(*r.sweep_spearman) : std::string("null")) << "\n";
    };
  });

  // report
  auto* rp = app.add_subcommand("report", "Render a results.json as a table");
  std::string results_in, format = "md";
  rp->add_option("--in", results_in, "results.json (default <workspace>/reports/results.json)");
  rp->add_option("--format", format, "md or csv")->capture_default_str()->check(CLI::IsMember({"md", "csv"}));
  rp->callback([&] {
    action = [&] {
      const fs::path in = results_in.empty() ? fs::path(g.workspace) / "reports" / "results.json" : fs::path(results_in);
      json j;
      try {
        j = json::parse(read_file(in));
      } catch (const json::parse_error& e) {
        fail(ErrorKind::kData, in.string() + ": " + e.what());
      }
      if (g.json_out) {
        std::cout << j.dump(2) << "\n";
        return;
      }
      std::vector<exp::ExperimentResult> rows;
      for (const auto& r : j) {
        exp::ExperimentResult er;
        er.id = r.at("id").get<std::string>();
        er.spec = exp::ExperimentSpec::from_json(r.at("spec"));
        er.aucs = r.at("aucs").get<std::vector<double>>();
        er.interval.mean = r.at("auc_mean");
        er.interval.half_width = r.at("auc_ci");
        er.interval.n = r.at("n");
        if (!r.at("baseline_auc").is_null()) er.baseline_auc = r.at("baseline_auc").get<double>();
        if (!r.at("fid").is_null()) er.fid = r.at("fid").get<double>();
        er.seconds = r.at("seconds");
        if (!r.at("error").is_null()) er.error = r.at("error");
        if (r.contains("sweep"))
          for (const auto& p : r["sweep"]) {
            exp::SweepPoint sp;
            sp.scale = p.at("scale");
            sp.aucs = p.at("aucs").get<std::vector<double>>();
            sp.interval.mean = p.at("auc_mean");
            sp.interval.half_width = p.at("auc_ci");
            sp.interval.n = static_cast<int>(sp.aucs.size());
            if (!p.at("fid").is_null()) sp.fid = p.at("fid").get<double>();
            if (!p.at("error").is_null()) sp.error = p.at("error");
            er.sweep.push_back(sp);
          }
        if (r.contains("spearman_auc_fid") && !r["spearman_auc_fid"].is_null()) er.sweep_spearman = r["spearman_auc_fid"].get<double>();
        rows.push_back(std::move(er));
      }
      std::cout << (format == "csv" ? exp::results_csv(rows) : exp::results_markdown(rows));
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 1;
  }

  try {
    action();
    return 0;
  } catch (const Error& e) {
    std::cerr << "mialab: " << e.what() << "\n";
    return e.is_validation() ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "mialab: " << e.what() << "\n";
    return 2;
  }
}
