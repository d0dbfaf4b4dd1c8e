#pragma once

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "dvstn/bench.hpp"
#include "dvstn/compression.hpp"
#include "dvstn/model_format.hpp"
#include "dvstn/synth.hpp"
#include "dvstn/tcp_sink.hpp"
#include "dvstn/train.hpp"
#include "dvstn/weights_io.hpp"
#include "dvstn/zoo.hpp"

namespace dvstn::cli {

// exit codes: 0 success, 1 usage, 2 data/format, 3 runtime
inline int exit_code_for(const Error& e) {
  switch (e.kind()) {
    case ErrorKind::usage: return 1;
    case ErrorKind::data: return 2;
    case ErrorKind::config: return 2;
    case ErrorKind::runtime: return 3;
  }
  return 3;
}

// Resolves --model arguments: an existing path, a file under
// $DVSTN_MODEL_DIR, or a built-in canonical id (m1..m8).
inline ModelSpec resolve_model(const std::string& arg) {
  namespace fs = std::filesystem;
  if (fs::exists(arg)) return load_model(arg);
  if (const char* dir = std::getenv("DVSTN_MODEL_DIR")) {
    fs::path base(dir);
    if (fs::exists(base / arg)) return load_model((base / arg).string());
    if (fs::exists(base / (arg + ".model"))) return load_model((base / (arg + ".model")).string());
  }
  for (const auto& id : canonical_ids())
    if (arg == id) return canonical_model(id);
  throw data_error("cannot resolve model '" + arg +
                   "': no such file, not in DVSTN_MODEL_DIR, not a canonical id (m1..m8)");
}

namespace detail_cli {

inline std::string human_millions(long long v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1fM", double(v) / 1e6);
  return buf;
}

struct PassArg {
  std::string name;
  std::string value;
};

inline std::vector<PassArg> parse_passes(const std::string& list) {
  std::vector<PassArg> out;
  std::istringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    auto colon = item.find(':');
    PassArg p;
    p.name = item.substr(0, colon == std::string::npos ? item.size() : colon);
    if (colon != std::string::npos) p.value = item.substr(colon + 1);
    out.push_back(std::move(p));
  }
  return out;
}

inline ClassCounts parse_counts(const std::string& list) {
  ClassCounts counts;
  std::istringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto eq = item.find('=');
    if (eq == std::string::npos) throw usage_error("expected action=count, got '" + item + "'");
    auto action = action_from_name(item.substr(0, eq));
    if (!action) throw usage_error("unknown action '" + item.substr(0, eq) + "'");
    int n = std::stoi(item.substr(eq + 1));
    if (n < 0) throw usage_error("clip counts must be >= 0");
    counts[*action] = n;
  }
  return counts;
}

}  // namespace detail_cli

inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"event-camera fall detection: models, compression, training, streaming"};
  app.name("dvstn");
  app.require_subcommand(1);

  // ---- count ----
  auto* count_cmd = app.add_subcommand("count", "print parameter and mac counts for a model");
  std::string count_model;
  int count_side = 0;
  count_cmd->add_option("--model", count_model, "model file, canonical id, or name in DVSTN_MODEL_DIR")->required();
  count_cmd->add_option("--side", count_side, "override the input side");

  // ---- transform ----
  auto* tf_cmd = app.add_subcommand("transform", "apply compression passes in order");
  std::string tf_model, tf_passes, tf_out, tf_weights, tf_out_weights;
  tf_cmd->add_option("--model", tf_model)->required();
  tf_cmd->add_option("--passes", tf_passes,
                     "comma list: separable, scale:F, input:N, fold")->required();
  tf_cmd->add_option("--out", tf_out, "output model file")->required();
  tf_cmd->add_option("--weights", tf_weights, "input weights (required by fold)");
  tf_cmd->add_option("--out-weights", tf_out_weights, "output weights (fold)");

  // ---- fold ----
  auto* fold_cmd = app.add_subcommand("fold", "fold batchnorm into the preceding layers");
  std::string fold_model, fold_weights, fold_out_model, fold_out_weights;
  fold_cmd->add_option("--model", fold_model)->required();
  fold_cmd->add_option("--weights", fold_weights)->required();
  fold_cmd->add_option("--out-model", fold_out_model)->required();
  fold_cmd->add_option("--out-weights", fold_out_weights)->required();

  // ---- simulate ----
  auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic event-camera dataset");
  std::string sim_preset, sim_out, sim_counts;
  std::uint64_t sim_seed = 0;
  int sim_w = 640, sim_h = 480;
  double sim_noise = 0.002;
  sim_cmd->add_option("--preset", sim_preset, "'desk' = 500 train / 100 test clips");
  sim_cmd->add_option("--counts", sim_counts, "explicit action=count list");
  sim_cmd->add_option("--out", sim_out)->required();
  sim_cmd->add_option("--seed", sim_seed);
  sim_cmd->add_option("--width", sim_w);
  sim_cmd->add_option("--height", sim_h);
  sim_cmd->add_option("--noise", sim_noise);

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset manifest");
  std::string train_model, train_data, train_out, train_eval;
  TrainHyperParams hp;
  train_cmd->add_option("--model", train_model)->required();
  train_cmd->add_option("--data", train_data, "training manifest")->required();
  train_cmd->add_option("--out", train_out, "output weight file")->required();
  train_cmd->add_option("--eval-data", train_eval, "manifest for per-epoch F1");
  train_cmd->add_option("--lr", hp.lr);
  train_cmd->add_option("--momentum", hp.momentum);
  train_cmd->add_option("--batch", hp.batch);
  train_cmd->add_option("--epochs", hp.epochs);
  train_cmd->add_option("--seed", hp.seed);
  train_cmd->add_option("--threads", hp.threads);

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "precision/recall/F1 over a dataset");
  std::string eval_model, eval_weights, eval_data;
  float eval_threshold = 0.5f;
  eval_cmd->add_option("--model", eval_model)->required();
  eval_cmd->add_option("--weights", eval_weights)->required();
  eval_cmd->add_option("--data", eval_data)->required();
  eval_cmd->add_option("--threshold", eval_threshold);

  // ---- stream ----
  auto* stream_cmd = app.add_subcommand("stream", "run detection over a frame file");
  std::string stream_model, stream_weights, stream_input, stream_sink;
  int stream_stride = 1;
  float stream_threshold = 0.5f;
  stream_cmd->add_option("--model", stream_model)->required();
  stream_cmd->add_option("--weights", stream_weights)->required();
  stream_cmd->add_option("--input", stream_input, "DVSF file, or - for stdin")->required();
  stream_cmd->add_option("--stride", stream_stride, "classify every k-th frame");
  stream_cmd->add_option("--threshold", stream_threshold);
  stream_cmd->add_option("--sink", stream_sink, "host:port for a newline-delimited TCP copy");

  // ---- bench ----
  auto* bench_cmd = app.add_subcommand("bench", "latency/throughput of window classification");
  std::string bench_model_arg, bench_weights;
  int bench_warmup = 20, bench_iters = 200, bench_stride = 1, bench_threads = 1;
  bench_cmd->add_option("--model", bench_model_arg)->required();
  bench_cmd->add_option("--weights", bench_weights, "weight file (default: seeded random init)");
  bench_cmd->add_option("--warmup", bench_warmup);
  bench_cmd->add_option("--iters", bench_iters);
  bench_cmd->add_option("--stride", bench_stride);
  bench_cmd->add_option("--threads", bench_threads, "engine threads (default 1)");

  // ---- events ----
  auto* events_cmd = app.add_subcommand("events", "accumulate a DVSE event file into DVSF frames");
  std::string events_in, events_out;
  std::uint64_t events_interval = kDefaultIntervalUs;
  int events_gain = 255;
  events_cmd->add_option("--input", events_in, "DVSE event file")->required();
  events_cmd->add_option("--out", events_out, "DVSF frame file")->required();
  events_cmd->add_option("--interval-us", events_interval, "accumulation interval");
  events_cmd->add_option("--gain", events_gain, "per-event intensity contribution");

  // ---- canonical ----
  auto* canon_cmd = app.add_subcommand("canonical", "write canonical model files");
  std::string canon_id, canon_out;
  canon_cmd->add_option("--id", canon_id, "one of m1..m8 (default: all)");
  canon_cmd->add_option("--out", canon_out, "output file (single id) or directory")->required();

  std::vector<const char*> argv;
  argv.push_back("dvstn");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);  // prints the usage text
    return 1;
  }

  try {
    if (count_cmd->parsed()) {
      ModelSpec spec = resolve_model(count_model);
      if (count_side > 0) spec = set_input_resolution(spec, count_side);
      long long params = count_params(spec), macs = count_macs(spec);
      out << "model " << spec.name << " @ " << spec.input_shape.h << "x" << spec.input_shape.w
          << "\n";
      out << "params " << params << " (~" << detail_cli::human_millions(params) << ")\n";
      out << "macs " << macs << " (~" << detail_cli::human_millions(macs) << ")\n";
    } else if (tf_cmd->parsed()) {
      ModelSpec spec = resolve_model(tf_model);
      std::optional<WeightStore> weights;
      if (!tf_weights.empty()) weights = load_weights(tf_weights, spec);
      for (const auto& pass : detail_cli::parse_passes(tf_passes)) {
        if (pass.name == "separable") {
          if (weights)
            throw usage_error("the separable pass invalidates weights; rerun training instead");
          spec = separable_factorize(spec);
        } else if (pass.name == "scale") {
          if (weights)
            throw usage_error("the scale pass invalidates weights; rerun training instead");
          spec = scale_channels(spec, pass.value.empty() ? 0.75 : std::stod(pass.value));
        } else if (pass.name == "input") {
          if (pass.value.empty()) throw usage_error("input pass needs a side, e.g. input:32");
          spec = set_input_resolution(spec, std::stoi(pass.value));
        } else if (pass.name == "fold") {
          if (weights) {
            auto [folded_spec, folded_w] = fold_batchnorm(spec, *weights);
            spec = std::move(folded_spec);
            weights = std::move(folded_w);
          } else {
            // architecture-level fold: the structure fold_batchnorm
            // would produce, for weightless spec pipelines
            spec = strip_batchnorm(spec);
          }
        } else {
          throw usage_error("unknown pass '" + pass.name + "'");
        }
      }
      save_model(spec, tf_out);
      out << "wrote " << tf_out << "\n";
      if (weights) {
        if (tf_out_weights.empty())
          throw usage_error("--out-weights is required when weights flow through the passes");
        save_weights(*weights, tf_out_weights);
        out << "wrote " << tf_out_weights << "\n";
      }
    } else if (fold_cmd->parsed()) {
      ModelSpec spec = resolve_model(fold_model);
      WeightStore weights = load_weights(fold_weights, spec);
      auto [folded_spec, folded_w] = fold_batchnorm(spec, weights);
      save_model(folded_spec, fold_out_model);
      save_weights(folded_w, fold_out_weights);
      out << "wrote " << fold_out_model << " and " << fold_out_weights << "\n";
    } else if (sim_cmd->parsed()) {
      DatasetOptions opts;
      opts.width = sim_w;
      opts.height = sim_h;
      opts.noise_rate = sim_noise;
      if (sim_preset == "desk") {
        // desk clips render at quarter sensor resolution to keep the
        // dataset a couple of GB instead of ten
        if (!sim_cmd->count("--width")) opts.width = 320;
        if (!sim_cmd->count("--height")) opts.height = 240;
        DeskDataset desk = generate_desk_dataset(sim_out, sim_seed, opts);
        out << "wrote " << desk.train_manifest << " (" << kDeskTrainClips << " clips)\n";
        out << "wrote " << desk.test_manifest << " (" << kDeskTestClips << " clips)\n";
      } else if (!sim_preset.empty()) {
        throw usage_error("unknown preset '" + sim_preset + "'");
      } else if (!sim_counts.empty()) {
        ClassCounts counts = detail_cli::parse_counts(sim_counts);
        Manifest m = generate_dataset(counts, sim_seed, sim_out, "manifest.tsv", opts);
        out << "wrote " << sim_out << "/manifest.tsv (" << m.entries.size() << " clips)\n";
      } else {
        throw usage_error("simulate needs --preset desk or --counts");
      }
    } else if (train_cmd->parsed()) {
      ModelSpec spec = resolve_model(train_model);
      TrainResult result = train(spec, train_data, hp, train_eval, &out);
      save_weights(result.weights, train_out);
      out << "wrote " << train_out << "\n";
    } else if (eval_cmd->parsed()) {
      ModelSpec spec = resolve_model(eval_model);
      WeightStore weights = load_weights(eval_weights, spec);
      Metrics m = evaluate(spec, weights, eval_data, eval_threshold);
      out << "tp " << m.tp << " fp " << m.fp << " tn " << m.tn << " fn " << m.fn << "\n";
      char buf[96];
      std::snprintf(buf, sizeof buf, "precision %.4f recall %.4f f1 %.4f\n", m.precision,
                    m.recall, m.f1);
      out << buf;
    } else if (stream_cmd->parsed()) {
      ModelSpec spec = resolve_model(stream_model);
      WeightStore weights = load_weights(stream_weights, spec);
      std::vector<EventFrame> frames;
      if (stream_input == "-") {
        frames = load_frames_stream(std::cin, "stdin");
      } else {
        frames = load_frames(stream_input);
      }
      std::optional<TcpSink> sink;
      if (!stream_sink.empty()) {
        auto colon = stream_sink.rfind(':');
        if (colon == std::string::npos)
          throw usage_error("--sink expects host:port");
        sink.emplace(stream_sink.substr(0, colon), std::stoi(stream_sink.substr(colon + 1)));
      }
      DetectorOptions opts;
      opts.stride = stream_stride;
      opts.threshold = stream_threshold;
      StreamDetector detector(spec, weights, opts);
      for (const auto& f : frames) {
        if (auto det = detector.push(f)) {
          std::string line = detection_line(*det);
          out << line << "\n";
          if (sink) sink->send_line(line);
        }
      }
      for (const auto& alert : detector.alerts())
        err << "alert: " << detection_line(alert) << "\n";
    } else if (bench_cmd->parsed()) {
      ModelSpec spec = resolve_model(bench_model_arg);
      WeightStore weights =
          bench_weights.empty() ? init_weights(spec, 0) : load_weights(bench_weights, spec);
      int prev = thread_count();
      set_threads(bench_threads);
      BenchReport report;
      try {
        report = bench_model(spec, weights, bench_warmup, bench_iters, bench_stride);
      } catch (...) {
        set_threads(prev);
        throw;
      }
      set_threads(prev);
      out << bench_human(report);
      out << bench_machine_line(report) << "\n";
    } else if (events_cmd->parsed()) {
      EventFile file = load_events(events_in);
      AccumulateResult acc =
          accumulate_events(file.events, events_interval, file.width, file.height, events_gain);
      if (acc.frames.empty()) throw data_error("no events to accumulate in '" + events_in + "'");
      save_frames(acc.frames, events_out);
      out << "wrote " << events_out << " (" << acc.frames.size() << " frames, " << acc.dropped
          << " events dropped)\n";
    } else if (canon_cmd->parsed()) {
      namespace fs = std::filesystem;
      if (canon_id.empty()) {
        fs::create_directories(canon_out);
        for (const auto& id : canonical_ids()) {
          fs::path p = fs::path(canon_out) / (id + ".model");
          save_model(canonical_model(id), p.string());
          out << "wrote " << p.string() << "\n";
        }
      } else {
        save_model(canonical_model(canon_id), canon_out);
        out << "wrote " << canon_out << "\n";
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

}  // namespace dvstn::cli
