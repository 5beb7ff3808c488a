// SPDX-License-Identifier: Apache-2.0
//
// Single entry binary: gen-data / extract / train / eval / ablate / gradcheck.
// Exit codes: 0 success, 1 usage or configuration error, 2 data or format
// error, 3 numerical failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "alei/train.hpp"

using namespace alei;

namespace {

struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Every tunable in one place; config-file keys and flag overrides both land
// here, and the effective state is echoed before a run.
struct Settings {
  ModelConfig model;
  TrainConfig train;
  GenConfig gen;
  std::string kinds_csv = "image,srm,npr,bayar";
  std::string moe_sign = "literal";

  void finalize() {
    std::vector<ExtractorKind> kinds;
    for (const auto& k : split_csv(kinds_csv)) kinds.push_back(kind_from_name(k));
    model.extractors.kinds = kinds;
    model.backbone.modalities = static_cast<int>(kinds.size());
    train.moe_sign = moe_sign_from_name(moe_sign);
    model.validate();
  }

  void apply(const std::string& key, const std::string& val) {
    auto as_int = [&] { return std::stoi(val); };
    auto as_dbl = [&] { return std::stod(val); };
    auto as_u64 = [&] { return static_cast<std::uint64_t>(std::stoull(val)); };
    auto as_bool = [&] {
      if (val == "1" || val == "true") return true;
      if (val == "0" || val == "false") return false;
      throw usage_error("config key " + key + " expects a boolean, got '" + val + "'");
    };
    if (key == "model.image_size") model.backbone.image_size = as_int();
    else if (key == "model.patch_size") model.backbone.patch_size = as_int();
    else if (key == "model.embed_dim") model.backbone.embed_dim = as_int();
    else if (key == "model.layers") model.backbone.layers = as_int();
    else if (key == "model.heads") model.backbone.heads = as_int();
    else if (key == "model.lora_rank") model.backbone.lora_rank = as_int();
    else if (key == "model.lora_alpha") model.backbone.lora_alpha = as_dbl();
    else if (key == "model.kinds") kinds_csv = val;
    else if (key == "model.npr_factor") model.extractors.npr_factor = as_int();
    else if (key == "model.hpr_sigma") model.extractors.hpr_sigma = as_dbl();
    else if (key == "model.conv1") model.adapter.conv1_channels = as_int();
    else if (key == "model.conv2") model.adapter.conv2_channels = as_int();
    else if (key == "model.base_seed") model.base_seed = as_u64();
    else if (key == "model.early_fusion") model.early_fusion = as_bool();
    else if (key == "model.fusion_layers") {
      model.backbone.fusion_layers.clear();
      for (const auto& t : split_csv(val)) model.backbone.fusion_layers.push_back(std::stoi(t));
    }
    else if (key == "train.lr") train.lr = as_dbl();
    else if (key == "train.beta1") train.beta1 = as_dbl();
    else if (key == "train.beta2") train.beta2 = as_dbl();
    else if (key == "train.batch") train.batch = as_int();
    else if (key == "train.epochs") train.epochs = as_int();
    else if (key == "train.lambda") train.lambda = as_dbl();
    else if (key == "train.moe_sign") moe_sign = val;
    else if (key == "train.seed") train.seed = as_u64();
    else if (key == "train.freeze_lora_phase2") train.freeze_lora_phase2 = as_bool();
    else if (key == "train.augment_crop") train.augment_crop = as_bool();
    else if (key == "train.crop_size") train.crop_size = as_int();
    else if (key == "train.distort_augment") train.distort_augment = as_bool();
    else if (key == "train.verbose") train.verbose = as_bool();
    else if (key == "gen.size") gen.size = as_int();
    else if (key == "gen.real_sigma_min") gen.real_sigma_min = as_dbl();
    else if (key == "gen.real_sigma_max") gen.real_sigma_max = as_dbl();
    else if (key == "gen.up_factor") gen.up_factor = as_int();
    else if (key == "gen.up_shift") gen.up_shift = as_int();
    else if (key == "gen.hf_band") gen.hf_band = as_dbl();
    else if (key == "gen.hf_boost") gen.hf_boost = as_dbl();
    else if (key == "gen.hf_floor") gen.hf_floor = as_dbl();
    else if (key == "gen.cb_amp") gen.cb_amp = as_dbl();
    else throw usage_error("unknown config key: " + key);
  }

  void load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw format_error("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos) continue;
      const auto last = line.find_last_not_of(" \t\r");
      line = line.substr(first, last - first + 1);
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw usage_error(path + ":" + std::to_string(lineno) + ": expected key=value");
      auto strip = [](std::string s) {
        const auto a = s.find_first_not_of(" \t");
        const auto b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      apply(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
    }
  }

  void echo(std::FILE* out) const {
    std::fprintf(out, "# effective configuration\n");
    std::fprintf(out, "model.image_size=%d\n", model.backbone.image_size);
    std::fprintf(out, "model.patch_size=%d\n", model.backbone.patch_size);
    std::fprintf(out, "model.embed_dim=%d\n", model.backbone.embed_dim);
    std::fprintf(out, "model.layers=%d\n", model.backbone.layers);
    std::fprintf(out, "model.heads=%d\n", model.backbone.heads);
    std::fprintf(out, "model.lora_rank=%d\n", model.backbone.lora_rank);
    std::fprintf(out, "model.lora_alpha=%g\n", model.backbone.lora_alpha);
    std::fprintf(out, "model.kinds=%s\n", kinds_csv.c_str());
    std::fprintf(out, "model.npr_factor=%d\n", model.extractors.npr_factor);
    std::fprintf(out, "model.hpr_sigma=%g\n", model.extractors.hpr_sigma);
    std::fprintf(out, "model.conv1=%d\n", model.adapter.conv1_channels);
    std::fprintf(out, "model.conv2=%d\n", model.adapter.conv2_channels);
    std::fprintf(out, "model.base_seed=%llu\n",
                 static_cast<unsigned long long>(model.base_seed));
    std::fprintf(out, "train.lr=%g\n", train.lr);
    std::fprintf(out, "train.batch=%d\n", train.batch);
    std::fprintf(out, "train.epochs=%d\n", train.epochs);
    std::fprintf(out, "train.lambda=%g\n", train.lambda);
    std::fprintf(out, "train.moe_sign=%s\n", moe_sign.c_str());
    std::fprintf(out, "train.seed=%llu\n", static_cast<unsigned long long>(train.seed));
    std::fprintf(out, "train.freeze_lora_phase2=%d\n", train.freeze_lora_phase2 ? 1 : 0);
    std::fprintf(out, "train.augment_crop=%d\n", train.augment_crop ? 1 : 0);
    std::fprintf(out, "train.crop_size=%d\n", train.crop_size);
    std::fprintf(out, "train.distort_augment=%d\n", train.distort_augment ? 1 : 0);
    std::fprintf(out, "gen.size=%d\n", gen.size);
    std::fprintf(out, "gen.cb_amp=%g\n", gen.cb_amp);
    std::fprintf(out, "gen.hf_boost=%g\n", gen.hf_boost);
    std::fprintf(out, "gen.hf_floor=%g\n", gen.hf_floor);
  }
};

Pipeline make_pipeline(const Settings& st, const std::vector<SampleRecord>& train_data) {
  Pipeline pipe;
  pipe.extractors = st.model.extractors;
  pipe.stats = Pipeline::fit_stats(train_data, st.model.extractors);
  return pipe;
}

Pipeline pipeline_from_checkpoint(const Settings& st, const Checkpoint& ck) {
  Pipeline pipe;
  pipe.extractors = st.model.extractors;
  pipe.stats = stats_from_checkpoint(ck);
  if (pipe.stats.empty())
    throw format_error("checkpoint carries no standardization statistics");
  return pipe;
}

void print_metrics(const Metrics& m, const std::string& report, const std::string& tag) {
  if (report == "csv") {
    std::printf("tag,n,acc,ap\n%s,%d,%.6f,%.6f\n", tag.c_str(), m.n, m.acc, m.ap);
    std::printf("family,acc");
    const size_t nslots = m.family_p.empty() ? 0 : m.family_p.begin()->second.size();
    for (size_t i = 0; i < nslots; ++i) std::printf(",p%zu", i);
    std::printf("\n");
    for (const auto& [fam, acc] : m.family_acc) {
      std::printf("%s,%.6f", fam.c_str(), acc);
      auto it = m.family_p.find(fam);
      if (it != m.family_p.end())
        for (double v : it->second) std::printf(",%.6f", v);
      std::printf("\n");
    }
  } else {
    std::printf("%s: n=%d acc=%.4f ap=%.4f\n", tag.c_str(), m.n, m.acc, m.ap);
    for (const auto& [fam, acc] : m.family_acc) {
      std::printf("  %-5s acc=%.4f", fam.c_str(), acc);
      auto it = m.family_p.find(fam);
      if (it != m.family_p.end()) {
        std::printf("  router=[");
        for (size_t i = 0; i < it->second.size(); ++i)
          std::printf("%s%.3f", i ? " " : "", it->second[i]);
        std::printf("]");
      }
      std::printf("\n");
    }
  }
}

int cmd_gen_data(const Settings& st, const std::string& out, int n_real, int n_fake,
                 const std::string& families, std::uint64_t seed, int size,
                 const std::string& distort) {
  GenConfig gc = st.gen;
  gc.size = size > 0 ? size : gc.size;
  auto data = gen_real(seed, n_real, gc);
  for (const auto& fam : split_csv(families)) {
    auto fakes = gen_fake(seed, n_fake, family_from_name(fam), gc);
    data.insert(data.end(), fakes.begin(), fakes.end());
  }
  if (distort != "none") {
    DistortionConfig dc;
    dc.kind = distortion_from_name(distort);
    for (auto& s : data) s.image = apply_distortion(s.image, dc);
  }
  write_dataset(out, data);
  std::printf("wrote %zu samples to %s\n", data.size(), out.c_str());
  return 0;
}

int cmd_extract(const Settings& st, const std::string& in, const std::string& out) {
  auto data = read_dataset(in);
  StatsAccumulator<float> acc(st.model.extractors);
  for (const auto& s : data) acc.add(s.image);
  const auto stats = acc.finish();
  for (auto& s : data) s.image = extract_all(s.image, st.model.extractors, stats);
  write_dataset(out, data);
  std::printf("wrote %zu modality stacks (%d channels) to %s\n", data.size(),
              st.model.extractors.num_modalities() * 3, out.c_str());
  return 0;
}

int cmd_train(const Settings& st, int phase, int modality, const std::string& data_path,
              const std::string& resume, const std::string& out) {
  auto data = read_dataset(data_path);
  AleiModel<float> model(st.model);
  Pipeline pipe;
  if (!resume.empty()) {
    auto ck = Checkpoint::load(resume);
    model.load(ck);
    pipe = pipeline_from_checkpoint(st, ck);
  } else {
    if (phase == 2)
      throw usage_error("train --phase 2 requires --resume with the phase-1 checkpoint");
    pipe = make_pipeline(st, data);
  }
  st.echo(stdout);
  if (phase == 1) {
    if (modality >= model.modalities())
      throw usage_error("--modality " + std::to_string(modality) + " out of range (" +
                        std::to_string(model.modalities()) + " streams)");
    if (modality >= 0) {
      train_phase1(model, modality, data, pipe, st.train);
    } else {
      for (int j = 0; j < model.modalities(); ++j) {
        std::printf("phase 1: stream %d (%s)\n", j,
                    kind_name(st.model.extractors.kinds[static_cast<size_t>(j)]).c_str());
        train_phase1(model, j, data, pipe, st.train);
      }
      std::printf("phase 1: low-level encoder\n");
      train_phase1_encoder(model, data, pipe, st.train);
    }
  } else {
    train_phase2(model, data, pipe, st.train);
  }
  full_checkpoint(model, pipe).save(out);
  std::printf("saved checkpoint to %s\n", out.c_str());
  return 0;
}

int cmd_eval(const Settings& st, const std::string& ckpt, const std::string& data_path,
             const std::string& report) {
  auto data = read_dataset(data_path);
  AleiModel<float> model(st.model);
  auto ck = Checkpoint::load(ckpt);
  model.load(ck);
  auto pipe = pipeline_from_checkpoint(st, ck);
  print_metrics(evaluate(model, data, pipe, st.train), report, "eval");
  return 0;
}

int cmd_ablate(const Settings& st, const std::string& resume, const std::string& train_path,
               const std::string& test_path, const std::string& disable,
               const std::string& out_csv) {
  auto train_data = read_dataset(train_path);
  auto test_data = read_dataset(test_path);
  auto base_ck = Checkpoint::load(resume);
  Pipeline pipe = pipeline_from_checkpoint(st, base_ck);

  std::vector<std::pair<std::string, RunFlags>> rows;
  rows.emplace_back("full", RunFlags{});
  for (const auto& name : split_csv(disable)) {
    RunFlags f;
    if (name == "le") f.lora = false;
    else if (name == "cla") f.fusion = false;
    else if (name == "liia") f.adapter = false;
    else if (name == "dfs") f.dfs = false;
    else throw usage_error("--disable expects le,cla,liia,dfs; got '" + name + "'");
    rows.emplace_back("no_" + name, f);
  }

  std::ofstream csv;
  if (!out_csv.empty()) {
    csv.open(out_csv);
    if (!csv) throw format_error("cannot open for writing: " + out_csv);
  }
  std::ostream& os = out_csv.empty() ? std::cout : csv;
  os << "config,acc,ap\n";
  for (const auto& [tag, flags] : rows) {
    AleiModel<float> model(st.model);
    model.load(base_ck);
    train_phase2(model, train_data, pipe, st.train, flags);
    const auto m = evaluate(model, test_data, pipe, st.train, flags);
    os << tag << "," << m.acc << "," << m.ap << "\n";
    std::printf("%-8s acc=%.4f ap=%.4f\n", tag.c_str(), m.acc, m.ap);
  }
  return 0;
}

int cmd_gradcheck(const std::string& dims) {
  if (dims != "tiny") throw usage_error("gradcheck supports --dims tiny");
  ModelConfig mc;
  mc.backbone.image_size = 8;
  mc.backbone.patch_size = 4;
  mc.backbone.embed_dim = 8;
  mc.backbone.layers = 4;
  mc.backbone.heads = 2;
  mc.backbone.modalities = 3;
  mc.backbone.lora_rank = 2;
  mc.backbone.lora_alpha = 4.0;
  mc.extractors.kinds = {ExtractorKind::IMAGE, ExtractorKind::SRM, ExtractorKind::NPR};
  mc.adapter.conv1_channels = 4;
  mc.adapter.conv2_channels = 6;
  AleiModel<double> model(mc);
  // move every gate off its symmetric zero so all paths carry gradient
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  for (auto& p : model.params.all())
    if (p.trainable)
      for (long long i = 0; i < p.tensor.numel(); ++i) p.tensor.data()[i] += 0.05 * nd(rng);
  auto planes = Tensor<double>::randn({9, 8, 8}, rng);
  auto f = [&]() {
    auto r = model.forward(planes);
    return total_loss(1.0, r.fused, r.p, 0.1, MoeSign::LITERAL);
  };
  std::vector<Parameter<double>*> trainable = model.params.trainable();
  // step chosen so one-ulp noise on exactly-zero gradients (for example the
  // attention key bias, which softmax shift invariance makes gradient-free)
  // stays below the 1e-4 gate while truncation error is still small
  const double worst = grad_check<double>(f, trainable, 2e-4);
  std::printf("gradcheck tiny: %zu parameter tensors, max rel err %.3e\n",
              trainable.size(), worst);
  if (!(worst < 1e-4)) {
    std::fprintf(stderr, "gradient check FAILED (>= 1e-4)\n");
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-stream forensic detector toolkit"};
  app.require_subcommand(1);

  Settings st;
  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "flat key=value configuration file");
  app.add_option("--set", overrides, "override a config key, key=value (repeatable)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic labelled dataset");
  std::string gen_out, gen_families = "up", gen_distort = "none";
  int gen_nreal = 1000, gen_nfake = 1000, gen_size = 0;
  std::uint64_t gen_seed = 0;
  gen->add_option("--out", gen_out, "output dataset path")->required();
  gen->add_option("--n-real", gen_nreal, "number of real samples");
  gen->add_option("--n-fake", gen_nfake, "number of fakes per family");
  gen->add_option("--families", gen_families, "comma list from up,hf,cb");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--size", gen_size, "image side length (0 = config default)");
  gen->add_option("--distort", gen_distort, "none|blur|down|jpeg applied to all samples");

  // extract
  auto* ext = app.add_subcommand("extract", "write the modality-plane stack for a dataset");
  std::string ext_in, ext_out, ext_kinds;
  int ext_npr = 0;
  double ext_hpr = 0.0;
  ext->add_option("--in", ext_in, "input dataset")->required();
  ext->add_option("--out", ext_out, "output dataset")->required();
  ext->add_option("--kinds", ext_kinds, "comma list from image,srm,npr,bayar,hpr");
  ext->add_option("--npr-factor", ext_npr, "reconstruction factor");
  ext->add_option("--hpr-sigma", ext_hpr, "high-pass blur sigma");

  // train
  auto* tr = app.add_subcommand("train", "run one training phase");
  int tr_phase = 1, tr_modality = -1;
  std::string tr_data, tr_resume, tr_out = "model.ck";
  tr->add_option("--phase", tr_phase, "1 or 2")->check(CLI::IsMember({1, 2}));
  tr->add_option("--modality", tr_modality, "phase-1 stream index (-1 = all)");
  tr->add_option("--data", tr_data, "training dataset")->required();
  tr->add_option("--resume", tr_resume, "checkpoint to continue from");
  tr->add_option("--out", tr_out, "checkpoint output path");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_report = "text";
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--data", ev_data, "dataset path")->required();
  ev->add_option("--report", ev_report, "text|csv")->check(CLI::IsMember({"text", "csv"}));

  // ablate
  auto* ab = app.add_subcommand("ablate", "train and score component-off variants");
  std::string ab_resume, ab_train, ab_test, ab_disable = "le,cla,liia,dfs", ab_out;
  ab->add_option("--resume", ab_resume, "phase-1 checkpoint")->required();
  ab->add_option("--train-data", ab_train, "training dataset")->required();
  ab->add_option("--test-data", ab_test, "test dataset")->required();
  ab->add_option("--disable", ab_disable, "comma list from le,cla,liia,dfs");
  ab->add_option("--out", ab_out, "CSV output path (default stdout)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the full model");
  std::string gc_dims = "tiny";
  gc->add_option("--dims", gc_dims, "model size preset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (!config_path.empty()) st.load_file(config_path);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw usage_error("--set expects key=value, got " + kv);
      st.apply(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (ext->parsed() && !ext_kinds.empty()) st.apply("model.kinds", ext_kinds);
    if (ext->parsed() && ext_npr > 0) st.model.extractors.npr_factor = ext_npr;
    if (ext->parsed() && ext_hpr > 0) st.model.extractors.hpr_sigma = ext_hpr;
    st.finalize();

    if (gen->parsed())
      return cmd_gen_data(st, gen_out, gen_nreal, gen_nfake, gen_families, gen_seed,
                          gen_size, gen_distort);
    if (ext->parsed()) return cmd_extract(st, ext_in, ext_out);
    if (tr->parsed()) return cmd_train(st, tr_phase, tr_modality, tr_data, tr_resume, tr_out);
    if (ev->parsed()) return cmd_eval(st, ev_ckpt, ev_data, ev_report);
    if (ab->parsed()) return cmd_ablate(st, ab_resume, ab_train, ab_test, ab_disable, ab_out);
    if (gc->parsed()) return cmd_gradcheck(gc_dims);
    return 1;
  } catch (const usage_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const numerical_error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const format_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const dim_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
