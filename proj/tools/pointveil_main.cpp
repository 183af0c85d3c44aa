// pointveil: point-cloud protection pipeline.
//
// Workflow: synth a corpus, train a model, keygen, then encrypt / decrypt /
// eval / attack / metrics / dp. Every subcommand echoes its effective
// configuration (flag > config file > default) and exits nonzero with a
// one-line categorized error on failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "pointveil/pointveil.hpp"

namespace pv = pointveil;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;  // repeatable key=value overrides
  std::string seed_flag;          // highest-precedence seed override
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "flat key = value config file");
  cmd->add_option("--set", c.sets, "override a config key (key=value, repeatable)");
  cmd->add_option("--seed", c.seed_flag, "random seed (overrides config)");
}

pv::RunConfig resolve(const Common& c) {
  pv::RunConfig cfg;
  if (!c.config_path.empty()) cfg.load_file(c.config_path);
  for (const std::string& s : c.sets) {
    std::size_t eq = s.find('=');
    pv::require(eq != std::string::npos, pv::errc::usage, "--set expects key=value, got " + s);
    cfg.set(pv::detail::trim(s.substr(0, eq)), pv::detail::trim(s.substr(eq + 1)));
  }
  if (!c.seed_flag.empty()) cfg.set("seed", c.seed_flag);
  return cfg;
}

void echo(const pv::RunConfig& cfg) {
  std::cout << "# --- effective config ---\n";
  cfg.echo(std::cout);
  std::cout << "# --- end config ---\n";
}

pv::Task parse_task(const std::string& s) {
  if (s == "cls") return pv::Task::classification;
  if (s == "seg") return pv::Task::segmentation;
  pv::fail(pv::errc::usage, "task must be cls or seg, got " + s);
}

pv::TrainConfig train_config(const pv::RunConfig& cfg) {
  pv::TrainConfig tc;
  tc.lambda_s = cfg.f64("lambda_s");
  tc.lambda_p = cfg.f64("lambda_p");
  tc.lambda_as = cfg.f64("lambda_as");
  tc.epochs = cfg.u64("epochs");
  tc.batch_clouds = cfg.u64("batch");
  tc.lr = cfg.f64("lr");
  tc.hidden = cfg.u64("hidden");
  tc.f_blocks = cfg.u64("f_blocks");
  tc.faithful_single_coupling = cfg.flag("faithful_single_coupling");
  tc.m = cfg.u64("m");
  tc.mean_radius = cfg.f64("mean_radius");
  tc.mean_candidates = cfg.u64("mean_candidates");
  tc.grad_clip = cfg.f64("grad_clip");
  tc.divergence_threshold = cfg.f64("divergence_threshold");
  tc.seed = cfg.u64("seed");
  tc.trace_path = cfg.str("trace_path");
  return tc;
}

pv::ClassifierConfig downstream_config(const pv::RunConfig& cfg) {
  pv::ClassifierConfig dc;
  dc.hidden = cfg.u64("downstream_hidden");
  dc.epochs = cfg.u64("downstream_epochs");
  dc.lr = cfg.f64("downstream_lr");
  dc.seed = cfg.u64("seed");
  return dc;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

// EMD with the configured method; exact falls back to entropic over the cap
double emd_of(const pv::Mat& a, const pv::Mat& b, const pv::RunConfig& cfg, std::string& method) {
  bool entropic = cfg.str("emd") == "entropic" || a.rows != b.rows ||
                  a.rows > pv::kEmdExactCap || b.rows > pv::kEmdExactCap;
  if (!entropic) {
    method = "exact";
    return pv::emd_exact(a, b);
  }
  method = "entropic";
  return pv::emd_entropic(a, b, cfg.f64("emd_reg"), cfg.u64("emd_iters")).value;
}

int cmd_synth(const Common& common, const std::string& out_dir) {
  pv::RunConfig cfg = resolve(common);
  echo(cfg);
  pv::SynthSpec spec;
  spec.classes = cfg.list("classes");
  spec.points = cfg.u64("points");
  spec.clouds_per_class = cfg.u64("clouds_per_class");
  spec.jitter = cfg.f64("jitter");
  spec.seed = cfg.u64("seed");
  pv::Dataset ds = pv::generate(spec);
  pv::save_dataset(ds, out_dir);
  std::cout << "wrote " << ds.clouds.size() << " clouds (" << ds.train_idx.size() << " train, "
            << ds.test_idx.size() << " test) to " << out_dir << '\n';
  return 0;
}

int cmd_keygen(const Common& common, const std::string& out_path, std::size_t re_dim) {
  pv::RunConfig cfg = resolve(common);
  echo(cfg);
  pv::RotationKey key = pv::keygen(cfg.u64("seed"), re_dim);
  pv::save_key(key, out_path);
  std::cout << "wrote key to " << out_path << (re_dim ? " (with R_e)" : "") << '\n';
  return 0;
}

int cmd_train(const Common& common, const std::string& data_dir, const std::string& task_str,
              const std::string& out_path) {
  pv::RunConfig cfg = resolve(common);
  cfg.set("task", task_str);
  echo(cfg);
  pv::Task task = parse_task(task_str);
  pv::Dataset ds = pv::load_dataset(data_dir);
  pv::TrainResult result = pv::train(ds, task, train_config(cfg));
  if (result.diverged)
    pv::fail(pv::errc::training,
             "diverged after epoch " + std::to_string(result.completed_epochs) +
                 "; rolled-back model not saved");
  pv::save_model(result.bundle, out_path);
  if (!result.trace.empty()) {
    const pv::TraceRow& last = result.trace.back();
    std::cout << "final epoch " << last.epoch << ": L_s " << last.l_s << ", L_p " << last.l_p
              << ", L_as " << last.l_as << ", total " << last.total << '\n';
  }
  std::cout << "wrote model to " << out_path << '\n';
  return 0;
}

int cmd_encrypt(const Common& common, const std::string& model_path, const std::string& key_path,
                const std::string& in_path, const std::string& out_path) {
  pv::RunConfig cfg = resolve(common);
  echo(cfg);
  pv::ModelBundle bundle = pv::load_model(model_path);
  pv::RotationKey key = pv::load_key(key_path);
  pv::PointCloud cloud = pv::normalize(pv::load_cloud(in_path));
  pv::LatentCloud latent = bundle.project(cloud);
  pv::ProtectedCloud prot = pv::encrypt(latent, key, cfg.flag("per_part"));
  pv::save_protected(prot, out_path);
  std::cout << "wrote protected cloud (" << prot.size() << " points) to " << out_path << '\n';
  return 0;
}

int cmd_decrypt(const Common& common, const std::string& model_path, const std::string& key_path,
                const std::string& in_path, const std::string& out_path,
                const std::string& labels_path) {
  pv::RunConfig cfg = resolve(common);
  echo(cfg);
  pv::ModelBundle bundle = pv::load_model(model_path);
  pv::RotationKey key = pv::load_key(key_path);
  pv::ProtectedCloud prot = pv::load_protected(in_path);
  pv::require(prot.e.size() == bundle.cfg.m, pv::errc::input,
              "ciphertext latent dimension " + std::to_string(prot.e.size()) +
                  " does not match model (m = " + std::to_string(bundle.cfg.m) +
                  "); was it produced by a different model?");
  std::vector<int> assignments;
  if (!labels_path.empty()) {
    pv::PointCloud labeled = pv::load_cloud(labels_path);
    pv::require(labeled.has_parts(), pv::errc::input,
                "--labels file carries no part labels: " + labels_path);
    pv::require(labeled.size() == prot.size(), pv::errc::input,
                "--labels point count does not match ciphertext");
    assignments = labeled.part_labels;
  }
  pv::LatentCloud latent = pv::decrypt(prot, key, assignments);
  pv::PointCloud out = bundle.unproject(latent);
  pv::save_xyz(out, out_path);
  std::cout << "wrote recovered cloud (" << out.size() << " points) to " << out_path << '\n';
  return 0;
}

int cmd_metrics(const Common& common, const std::string& a_path, const std::string& b_path,
                const std::string& emd_method) {
  pv::RunConfig cfg = resolve(common);
  if (!emd_method.empty()) cfg.set("emd", emd_method);
  echo(cfg);
  pv::Mat a = pv::load_cloud(a_path).points;
  pv::Mat b = pv::load_cloud(b_path).points;
  std::cout << std::setprecision(10);
  std::cout << "cd = " << pv::chamfer(a, b) << '\n';
  std::string method;
  double e = emd_of(a, b, cfg, method);
  std::cout << "emd = " << e << '\n';
  std::cout << "emd_method = " << method << '\n';
  return 0;
}

int cmd_dp(const Common& common, const std::string& in_path, double epsilon,
           const std::string& out_path) {
  pv::RunConfig cfg = resolve(common);
  echo(cfg);
  pv::PointCloud cloud = pv::normalize(pv::load_cloud(in_path));
  pv::PointCloud noisy = pv::laplace_perturb(cloud, epsilon, cfg.u64("seed"));
  pv::save_xyz(noisy, out_path);
  std::cout << "wrote epsilon = " << epsilon << " perturbed cloud to " << out_path << '\n';
  return 0;
}

struct ProtectedSet {
  std::vector<pv::ProtectedCloud> clouds;
  std::vector<pv::PointCloud> originals;  // normalized
  std::vector<int> labels;
  std::vector<std::vector<int>> parts;
};

ProtectedSet protect_split(const pv::ModelBundle& bundle, const pv::RotationKey& key,
                           const pv::Dataset& ds, const std::vector<std::size_t>& idx,
                           bool per_part) {
  ProtectedSet out;
  for (std::size_t i : idx) {
    pv::PointCloud norm = pv::normalize(ds.clouds[i]);
    pv::LatentCloud latent = bundle.project(norm);
    out.clouds.push_back(pv::encrypt(latent, key, per_part));
    out.originals.push_back(std::move(norm));
    out.labels.push_back(ds.clouds[i].shape_label);
    out.parts.push_back(ds.clouds[i].part_labels);
  }
  return out;
}

int cmd_eval(const Common& common, const std::string& model_path, const std::string& key_path,
             const std::string& data_dir, const std::string& task_str,
             const std::string& out_path) {
  pv::RunConfig cfg = resolve(common);
  cfg.set("task", task_str);
  echo(cfg);
  pv::Task task = parse_task(task_str);
  pv::ModelBundle bundle = pv::load_model(model_path);
  pv::require(bundle.cfg.task == task, pv::errc::usage,
              std::string("task mismatch: model is ") + pv::task_name(bundle.cfg.task) +
                  ", requested " + task_str);
  pv::RotationKey key = pv::load_key(key_path);
  pv::Dataset ds = pv::load_dataset(data_dir);
  bool per_part = cfg.flag("per_part");

  ProtectedSet train_set = protect_split(bundle, key, ds, ds.train_idx, per_part);
  ProtectedSet test_set = protect_split(bundle, key, ds, ds.test_idx, per_part);
  pv::ClassifierConfig dc = downstream_config(cfg);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<pv::MetricReport> rows;

  // privacy block: attacker + distance of ciphertext / reconstruction / DP
  pv::AttackClassifier attacker = pv::AttackClassifier::train(ds, dc);
  {
    std::vector<int> preds;
    for (std::size_t i : ds.test_idx) preds.push_back(attacker.predict(ds.clouds[i].points));
    std::vector<int> labels;
    for (std::size_t i : ds.test_idx) labels.push_back(ds.clouds[i].shape_label);
    pv::Accuracy acc = pv::accuracy(preds, labels, attacker.k());
    rows.push_back({"attack_original", nan, nan, "none", acc.overall, acc.avg_class});
  }
  {
    pv::Accuracy acc = pv::attack_eval(attacker, test_set.clouds, test_set.labels);
    std::vector<double> cds, emds;
    std::string method = "none";
    for (std::size_t i = 0; i < test_set.clouds.size(); ++i) {
      cds.push_back(pv::chamfer(test_set.clouds[i].z_hat, test_set.originals[i].points));
      emds.push_back(emd_of(test_set.clouds[i].z_hat, test_set.originals[i].points, cfg, method));
    }
    rows.push_back(
        {"attack_protected", mean_of(cds), mean_of(emds), method, acc.overall, acc.avg_class});
  }
  {
    std::vector<double> cds, emds;
    std::string method = "none";
    for (std::size_t i = 0; i < test_set.clouds.size(); ++i) {
      pv::LatentCloud latent = pv::decrypt(test_set.clouds[i], key,
                                           per_part ? test_set.parts[i] : std::vector<int>{});
      pv::PointCloud rec = bundle.unproject(latent);
      cds.push_back(pv::chamfer(rec.points, test_set.originals[i].points));
      emds.push_back(emd_of(rec.points, test_set.originals[i].points, cfg, method));
    }
    rows.push_back({"reconstructed_correct_key", mean_of(cds), mean_of(emds), method, nan, nan});
  }
  for (double eps : cfg.list_f64("epsilon")) {
    std::vector<double> cds, emds;
    std::vector<int> preds;
    std::string method = "none";
    std::uint64_t seed = cfg.u64("seed");
    for (std::size_t i = 0; i < test_set.originals.size(); ++i) {
      pv::PointCloud noisy =
          pv::laplace_perturb(test_set.originals[i], eps, pv::derive_seed(seed, 900 + i));
      cds.push_back(pv::chamfer(noisy.points, test_set.originals[i].points));
      emds.push_back(emd_of(noisy.points, test_set.originals[i].points, cfg, method));
      preds.push_back(attacker.predict(noisy.points));
    }
    pv::Accuracy acc = pv::accuracy(preds, test_set.labels, attacker.k());
    std::ostringstream name;
    name << "dp_eps_" << eps;
    rows.push_back({name.str(), mean_of(cds), mean_of(emds), method, acc.overall, acc.avg_class});
  }

  // downstream block: protected-data task vs identity-protected baseline
  if (task == pv::Task::classification) {
    pv::ProtectedClassifier cls =
        pv::ProtectedClassifier::train(train_set.clouds, train_set.labels, bundle.cfg.K, dc);
    std::vector<int> preds;
    for (const auto& c : test_set.clouds) preds.push_back(cls.predict(c));
    pv::Accuracy acc = pv::accuracy(preds, test_set.labels, bundle.cfg.K);
    rows.push_back({"classify_protected", nan, nan, "none", acc.overall, acc.avg_class});

    auto identity_wrap = [](const std::vector<pv::PointCloud>& originals) {
      std::vector<pv::ProtectedCloud> out;
      for (const auto& c : originals) {
        pv::ProtectedCloud p;
        p.z_hat = c.points;
        p.id = c.id;
        out.push_back(std::move(p));
      }
      return out;
    };
    pv::ProtectedClassifier base = pv::ProtectedClassifier::train(
        identity_wrap(train_set.originals), train_set.labels, bundle.cfg.K, dc);
    std::vector<int> bpreds;
    for (const auto& c : identity_wrap(test_set.originals)) bpreds.push_back(base.predict(c));
    pv::Accuracy bacc = pv::accuracy(bpreds, test_set.labels, bundle.cfg.K);
    rows.push_back({"classify_baseline", nan, nan, "none", bacc.overall, bacc.avg_class});
  } else {
    pv::PointSegmenter seg =
        pv::PointSegmenter::train(train_set.clouds, train_set.parts, bundle.cfg.K_z, dc);
    std::vector<int> preds, labels;
    for (std::size_t i = 0; i < test_set.clouds.size(); ++i) {
      std::vector<int> p = seg.predict(test_set.clouds[i]);
      preds.insert(preds.end(), p.begin(), p.end());
      labels.insert(labels.end(), test_set.parts[i].begin(), test_set.parts[i].end());
    }
    pv::Accuracy acc = pv::accuracy(preds, labels, bundle.cfg.K_z);
    rows.push_back({"segment_protected", nan, nan, "none", acc.overall, acc.avg_class});

    std::vector<pv::ProtectedCloud> btrain, btest;
    for (const auto& c : train_set.originals) {
      pv::ProtectedCloud p;
      p.z_hat = c.points;
      btrain.push_back(std::move(p));
    }
    for (const auto& c : test_set.originals) {
      pv::ProtectedCloud p;
      p.z_hat = c.points;
      btest.push_back(std::move(p));
    }
    pv::PointSegmenter base = pv::PointSegmenter::train(btrain, train_set.parts, bundle.cfg.K_z, dc);
    std::vector<int> bpreds, blabels;
    for (std::size_t i = 0; i < btest.size(); ++i) {
      std::vector<int> p = base.predict(btest[i]);
      bpreds.insert(bpreds.end(), p.begin(), p.end());
      blabels.insert(blabels.end(), test_set.parts[i].begin(), test_set.parts[i].end());
    }
    pv::Accuracy bacc = pv::accuracy(bpreds, blabels, bundle.cfg.K_z);
    rows.push_back({"segment_baseline", nan, nan, "none", bacc.overall, bacc.avg_class});
  }

  pv::write_reports(out_path, rows);
  std::cout << "wrote " << rows.size() << " report rows to " << out_path << '\n';
  return 0;
}

int cmd_attack(const Common& common, const std::string& model_path, const std::string& key_path,
               const std::string& data_dir) {
  pv::RunConfig cfg = resolve(common);
  echo(cfg);
  pv::ModelBundle bundle = pv::load_model(model_path);
  pv::RotationKey key = pv::load_key(key_path);
  pv::Dataset ds = pv::load_dataset(data_dir);
  ProtectedSet test_set = protect_split(bundle, key, ds, ds.test_idx, cfg.flag("per_part"));

  pv::AttackClassifier attacker = pv::AttackClassifier::train(ds, downstream_config(cfg));
  std::vector<int> preds, labels;
  for (std::size_t i : ds.test_idx) {
    preds.push_back(attacker.predict(ds.clouds[i].points));
    labels.push_back(ds.clouds[i].shape_label);
  }
  pv::Accuracy orig = pv::accuracy(preds, labels, attacker.k());
  pv::Accuracy prot = pv::attack_eval(attacker, test_set.clouds, test_set.labels);
  std::cout << std::setprecision(10);
  std::cout << "attack_original_overall = " << orig.overall << '\n';
  std::cout << "attack_original_avg_class = " << orig.avg_class << '\n';
  std::cout << "attack_protected_overall = " << prot.overall << '\n';
  std::cout << "attack_protected_avg_class = " << prot.avg_class << '\n';
  std::cout << "chance = " << 1.0 / double(attacker.k()) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pointveil: latent-space point-cloud protection"};
  app.require_subcommand(1);

  Common c_synth, c_keygen, c_train, c_encrypt, c_decrypt, c_eval, c_attack, c_metrics, c_dp;
  std::string out_dir, out_path, data_dir, task_str, model_path, key_path, in_path;
  std::string a_path, b_path, emd_method, labels_path, spec_path;
  std::size_t re_dim = 0;
  double epsilon = 0.0;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic labeled corpus");
  add_common(synth, c_synth);
  synth->add_option("--spec", spec_path, "config file describing the corpus");
  synth->add_option("--out", out_dir, "output dataset directory")->required();

  CLI::App* keygen = app.add_subcommand("keygen", "derive a rotation key from a seed");
  add_common(keygen, c_keygen);
  keygen->add_option("--out", out_path, "output key file")->required();
  keygen->add_option("--re", re_dim, "also derive an m-dim R_e for the shape latent");

  CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
  add_common(train, c_train);
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--task", task_str, "cls or seg")->required();
  train->add_option("--out", out_path, "output model file")->required();

  CLI::App* encrypt = app.add_subcommand("encrypt", "project and rotate one cloud");
  add_common(encrypt, c_encrypt);
  encrypt->add_option("--model", model_path, "model file")->required();
  encrypt->add_option("--key", key_path, "key file")->required();
  encrypt->add_option("--in", in_path, "input cloud (.xyz/.off/.ply)")->required();
  encrypt->add_option("--out", out_path, "output protected file")->required();

  CLI::App* decrypt = app.add_subcommand("decrypt", "recover a cloud from a protected file");
  add_common(decrypt, c_decrypt);
  decrypt->add_option("--model", model_path, "model file")->required();
  decrypt->add_option("--key", key_path, "key file")->required();
  decrypt->add_option("--in", in_path, "input protected file")->required();
  decrypt->add_option("--out", out_path, "output .xyz path")->required();
  decrypt->add_option("--labels", labels_path, "labeled cloud supplying per-part assignments");

  CLI::App* eval = app.add_subcommand("eval", "full protected-pipeline report");
  add_common(eval, c_eval);
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--key", key_path, "key file")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--task", task_str, "cls or seg")->required();
  eval->add_option("--out", out_path, "output report csv")->required();

  CLI::App* attack = app.add_subcommand("attack", "attacker accuracy on originals vs protected");
  add_common(attack, c_attack);
  attack->add_option("--model", model_path, "model file")->required();
  attack->add_option("--key", key_path, "key file")->required();
  attack->add_option("--data", data_dir, "dataset directory")->required();

  CLI::App* metrics = app.add_subcommand("metrics", "distances between two clouds");
  add_common(metrics, c_metrics);
  metrics->add_option("--a", a_path, "first cloud")->required();
  metrics->add_option("--b", b_path, "second cloud")->required();
  metrics->add_option("--emd", emd_method, "exact or entropic");

  CLI::App* dp = app.add_subcommand("dp", "Laplace-noise baseline perturbation");
  add_common(dp, c_dp);
  dp->add_option("--in", in_path, "input cloud")->required();
  dp->add_option("--epsilon", epsilon, "privacy budget (smaller = noisier)")->required();
  dp->add_option("--out", out_path, "output .xyz path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: usage: " << e.what() << '\n';
    return int(pv::errc::usage);
  }

  try {
    if (synth->parsed()) {
      if (!spec_path.empty()) c_synth.config_path = spec_path;
      return cmd_synth(c_synth, out_dir);
    }
    if (keygen->parsed()) return cmd_keygen(c_keygen, out_path, re_dim);
    if (train->parsed()) return cmd_train(c_train, data_dir, task_str, out_path);
    if (encrypt->parsed()) return cmd_encrypt(c_encrypt, model_path, key_path, in_path, out_path);
    if (decrypt->parsed())
      return cmd_decrypt(c_decrypt, model_path, key_path, in_path, out_path, labels_path);
    if (eval->parsed()) return cmd_eval(c_eval, model_path, key_path, data_dir, task_str, out_path);
    if (attack->parsed()) return cmd_attack(c_attack, model_path, key_path, data_dir);
    if (metrics->parsed()) return cmd_metrics(c_metrics, a_path, b_path, emd_method);
    if (dp->parsed()) return cmd_dp(c_dp, in_path, epsilon, out_path);
  } catch (const pv::error& e) {
    std::cerr << "error: " << e.category() << ": " << e.what() << '\n';
    return int(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
