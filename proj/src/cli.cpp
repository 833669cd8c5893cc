#include "fidn/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "fidn/checkpoint.hpp"
#include "fidn/config.hpp"
#include "fidn/data.hpp"
#include "fidn/error.hpp"
#include "fidn/evaluate.hpp"
#include "fidn/kernels.hpp"
#include "fidn/model.hpp"
#include "fidn/trainer.hpp"
#include "fidn/verify.hpp"

namespace fidn::cli {

namespace {

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

// --set key=value, applied last.
void apply_overrides(RunConfig& config, const std::vector<std::string>& sets) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + s + "'");
    auto trim = [](std::string x) {
      const auto b = x.find_first_not_of(" \t");
      const auto e = x.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : x.substr(b, e - b + 1);
    };
    config.set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

std::filesystem::path train_manifest(const std::filesystem::path& data) {
  return std::filesystem::is_directory(data) ? data / "train.manifest" : data;
}

NetConfig net_from_config(const RunConfig& rc, const Dataset& data) {
  NetConfig net;
  net.input_channels = rc.get_size("input_channels");
  net.input_height = rc.get_size("input_height");
  net.input_width = rc.get_size("input_width");
  net.trunk = parse_trunk(rc.get("trunk"));
  net.fc_width = rc.get_size("fc_width");
  net.lambda_id = rc.get_double("lambda_id");
  net.seed = rc.get_u64("seed");
  auto resolve = [&](const char* key, std::size_t from_data, const char* what) {
    if (rc.get(key) == "auto") return from_data;
    const std::size_t v = rc.get_size(key);
    if (v != from_data) {
      throw ValidationError(std::string("config ") + key + " = " + std::to_string(v) + " but the data declares " +
                            what + "=" + std::to_string(from_data));
    }
    return v;
  };
  net.num_attributes = resolve("attributes", data.num_attributes, "T");
  net.num_classes = resolve("classes", data.num_classes, "C");
  return net;
}

TrainConfig train_from_config(const RunConfig& rc, const std::filesystem::path& out) {
  TrainConfig tc;
  tc.mode = parse_mode(rc.get("mode"));
  tc.epochs = rc.get_size("epochs");
  tc.batch_size = rc.get_size("batch_size");
  tc.lambda_id = rc.get_double("lambda_id");
  tc.learning_rate = rc.get_double("learning_rate");
  tc.seed = rc.get_u64("seed");
  tc.checkpoint = out;
  tc.checkpoint_every_epoch = rc.get_bool("checkpoint_every_epoch");
  const std::string& log = rc.get("log");
  if (log == "auto") {
    tc.log = out;
    tc.log += ".log.csv";
  } else if (log != "none") {
    tc.log = log;
  }
  return tc;
}

void print_config(std::ostream& out, const std::string& dump) {
  std::istringstream in(dump);
  std::string line;
  while (std::getline(in, line)) out << "config: " << line << '\n';
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::ostream& out) {
  SynthSpec spec = spec_path.empty() ? SynthSpec{} : parse_synth_spec(spec_path);
  const SynthOutput synth = synth_generate(spec);
  write_synth(synth, out_dir);
  out << "identities: " << synth.spec.identities << '\n'
      << "attributes: " << synth.spec.attributes << '\n'
      << "train: " << synth.train.size() << '\n'
      << "gallery: " << synth.gallery.size() << '\n'
      << "probe: " << synth.probe.size() << '\n'
      << "distractor: " << synth.distractor.size() << '\n'
      << "written: " << out_dir << '\n';
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out_path,
              const std::map<std::string, std::string>& flags, const std::vector<std::string>& sets,
              std::ostream& out) {
  RunConfig rc;
  if (!config_path.empty()) rc.load_file(config_path);
  for (const auto& [k, v] : flags) rc.set(k, v);
  apply_overrides(rc, sets);
  // Everything is validated before the first step.
  const LoadedDataset dataset = load_dataset(train_manifest(data), Role::Train);
  const NetConfig requested = net_from_config(rc, dataset.meta);
  const TrainConfig tc = train_from_config(rc, out_path);
  const NetConfig net = resolve_net_config(requested, tc.mode);
  net.validate();
  if (tc.batch_size < 2) throw ValidationError("batch_size must be >= 2");

  print_config(out, rc.dump());
  out << "config: resolved attributes = " << net.num_attributes << '\n'
      << "config: resolved classes = " << net.num_classes << '\n'
      << "config: resolved fusion = " << (net.fusion_enabled ? "on" : "off") << '\n'
      << "config: kernels = " << kernels::isa_name(kernels::active_isa()) << '\n'
      << "train samples: " << dataset.size() << '\n';
  train(net, tc, dataset, [&](const EpochSummary& s) {
    out << "epoch " << s.epoch << " l1=" << format("%.6f", s.mean_l1) << " l2=" << format("%.6f", s.mean_l2)
        << " total=" << format("%.6f", s.mean_total) << '\n';
    out.flush();
  });
  out << "checkpoint: " << out_path << '\n';
  if (!tc.log.empty()) out << "log: " << tc.log.string() << '\n';
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& gallery_path, const std::string& probe_path,
             const std::string& distractor_path, const std::string& report_dir, std::size_t max_rank,
             std::ostream& out) {
  const Checkpoint cp = load_checkpoint(ckpt);
  const LoadedDataset gallery = load_dataset(gallery_path);
  const LoadedDataset probe = load_dataset(probe_path);
  LoadedDataset distractors;
  if (!distractor_path.empty()) distractors = load_dataset(distractor_path);
  const Shape want{cp.params.config.input_channels, cp.params.config.input_height, cp.params.config.input_width};
  for (const LoadedDataset* d : std::initializer_list<const LoadedDataset*>{&gallery, &probe, &distractors}) {
    if (!d->images.empty() && d->images.front().shape() != want) {
      throw ShapeError("images are " + shape_string(d->images.front().shape()) + ", checkpoint expects " +
                       shape_string(want));
    }
  }
  EvalReport report = evaluate(cp.params, gallery, probe, distractor_path.empty() ? nullptr : &distractors, max_rank);
  report.config = {{"checkpoint", ckpt},
                   {"gallery", gallery_path},
                   {"probe", probe_path},
                   {"distractors", distractor_path.empty() ? "none" : distractor_path},
                   {"trunk", format_trunk(cp.params.config.trunk)},
                   {"fusion", cp.params.config.fusion_enabled ? "on" : "off"}};
  std::filesystem::create_directories(report_dir);
  const std::filesystem::path dir(report_dir);
  emit_report(report, dir / "cmc.csv", dir / "cmc.svg");
  {
    std::ofstream f(dir / "report.txt", std::ios::binary);
    if (!f) throw ValidationError("cannot write " + (dir / "report.txt").string());
    f << report_text(report);
  }
  for (const auto& [k, v] : report.config) out << "config: " << k << " = " << v << '\n';
  out << "gallery_size: " << report.gallery_size << '\n'
      << "probe_count: " << report.probe_count << '\n'
      << "distractor_count: " << report.distractor_count << '\n'
      << "rank1: " << format("%.3f", report.rank1) << '\n';
  for (std::size_t j = 0; j < report.attribute_accuracy.size(); ++j) {
    out << "attr_acc." << j << ": " << format("%.3f", report.attribute_accuracy[j]) << '\n';
  }
  out << "report: " << report_dir << '\n';
  return kExitOk;
}

void write_pgm(const std::filesystem::path& path, const Tensor<float>& map, std::size_t height, std::size_t width) {
  const std::size_t hf = map.dim(0), wf = map.dim(1);
  std::string bytes;
  bytes.reserve(height * width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const float v = map[(y * hf / height) * wf + (x * wf / width)];
      bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * v))));
    }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot write " + path.string());
  f << "P5\n" << width << ' ' << height << "\n255\n" << bytes;
  if (!f) throw ValidationError("failed writing " + path.string());
}

int cmd_cam(const std::string& ckpt, const std::string& image_path, std::size_t attr, const std::string& out_path,
            std::ostream& out) {
  const Checkpoint cp = load_checkpoint(ckpt);
  const NetConfig& net = cp.params.config;
  if (attr >= net.num_attributes) {
    throw ValidationError("attribute index " + std::to_string(attr) + " out of range [0, " +
                          std::to_string(net.num_attributes) + ")");
  }
  Tensor<float> image = load_tnsr(image_path);
  if (image.rank() == 3) image = image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  const Shape want{1, net.input_channels, net.input_height, net.input_width};
  if (image.shape() != want) {
    throw ShapeError("image is " + shape_string(image.shape()) + ", checkpoint expects " + shape_string(want));
  }
  const Tensor<float> map = cam(cp.params, image, attr);
  const std::filesystem::path p(out_path);
  if (p.extension() == ".pgm") {
    write_pgm(p, map, net.input_height, net.input_width);
    out << "format: pgm " << net.input_width << "x" << net.input_height << '\n';
  } else {
    save_tnsr(p, map);
    out << "format: tnsr " << shape_string(map.shape()) << '\n';
  }
  out << "attribute: " << attr << '\n' << "written: " << out_path << '\n';
  return kExitOk;
}

int cmd_verify(std::uint64_t seed, const std::string& fault_op, std::ostream& out) {
  verify::Options options;
  options.seed = seed;
  if (!fault_op.empty()) {
    const auto& names = verify::op_names();
    if (std::find(names.begin(), names.end(), fault_op) == names.end()) {
      throw ValidationError("unknown op '" + fault_op + "' for --inject-fault");
    }
    options.faulty_op = fault_op;
  }
  const verify::Summary summary = verify::run_all(options);
  out << verify::format_summary(summary);
  std::size_t failed = 0;
  for (const auto& c : summary.checks) failed += c.passed ? 0 : 1;
  out << "checks: " << summary.checks.size() << " failed: " << failed << '\n';
  return summary.passed() ? kExitOk : kExitNumerical;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint face identification and attribute prediction"};
  app.require_subcommand(1);

  std::string spec, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--spec", spec, "Synthetic spec file (key = value)");
  synth->add_option("--out", synth_out, "Output directory")->required();

  std::string config, data, mode, train_out, epochs, seed, batch, lambda, lr, log;
  std::vector<std::string> sets;
  auto* tr = app.add_subcommand("train", "Train a model");
  tr->add_option("--config", config, "Run config file");
  tr->add_option("--data", data, "Dataset directory or train manifest")->required();
  tr->add_option("--mode", mode, "joint | separate-attr | separate-id");
  tr->add_option("--out", train_out, "Checkpoint path")->required();
  tr->add_option("--epochs", epochs);
  tr->add_option("--seed", seed);
  tr->add_option("--batch-size", batch);
  tr->add_option("--lambda-id", lambda);
  tr->add_option("--learning-rate", lr);
  tr->add_option("--log", log, "CSV log path, 'auto' or 'none'");
  tr->add_option("--set", sets, "Override any config key: key=value");

  std::string ckpt, gallery, probe, distractors, report;
  std::size_t max_rank = 0;
  auto* ev = app.add_subcommand("eval", "Rank-1, CMC and attribute accuracy");
  ev->add_option("--ckpt", ckpt)->required();
  ev->add_option("--gallery", gallery)->required();
  ev->add_option("--probe", probe)->required();
  ev->add_option("--distractors", distractors);
  ev->add_option("--report", report, "Report directory")->required();
  ev->add_option("--max-rank", max_rank, "CMC length (default: gallery size)");

  std::string cam_ckpt, image, cam_out;
  std::size_t attr = 0;
  auto* cm = app.add_subcommand("cam", "Class activation map for one attribute");
  cm->add_option("--ckpt", cam_ckpt)->required();
  cm->add_option("--image", image)->required();
  cm->add_option("--attr", attr)->required();
  cm->add_option("--out", cam_out, "Output .tnsr or .pgm")->required();

  std::uint64_t verify_seed = 0;
  std::string fault_op;
  auto* vf = app.add_subcommand("verify", "Gradient checks and invariant properties");
  vf->add_option("--seed", verify_seed);
  vf->add_option("--inject-fault", fault_op, "Test fixture: perturb one op's analytic gradient");

  std::vector<std::string> argv_store{"fidn"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());

  int code = kExitOk;
  try {
    try {
      app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help() << "STATUS: OK\n";
      return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All) << "STATUS: OK\n";
      return kExitOk;
    } catch (const CLI::ParseError& e) {
      throw ValidationError(e.what());
    }
    if (*synth) {
      code = cmd_synth(spec, synth_out, out);
    } else if (*tr) {
      std::map<std::string, std::string> flags;
      if (!mode.empty()) flags["mode"] = mode;
      if (!epochs.empty()) flags["epochs"] = epochs;
      if (!seed.empty()) flags["seed"] = seed;
      if (!batch.empty()) flags["batch_size"] = batch;
      if (!lambda.empty()) flags["lambda_id"] = lambda;
      if (!lr.empty()) flags["learning_rate"] = lr;
      if (!log.empty()) flags["log"] = log;
      code = cmd_train(config, data, train_out, flags, sets, out);
    } else if (*ev) {
      code = cmd_eval(ckpt, gallery, probe, distractors, report, max_rank, out);
    } else if (*cm) {
      code = cmd_cam(cam_ckpt, image, attr, cam_out, out);
    } else if (*vf) {
      code = cmd_verify(verify_seed, fault_op, out);
    }
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << '\n';
    code = kExitNumerical;
  } catch (const std::exception& e) {
    // Validation, format and I/O problems are all caller-fixable.
    err << "error: " << e.what() << '\n';
    code = kExitUsage;
  }
  out << (code == kExitOk ? "STATUS: OK" : "STATUS: FAIL") << '\n';
  return code;
}

}  // namespace fidn::cli
