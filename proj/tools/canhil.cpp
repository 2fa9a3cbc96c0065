// canhil: run scenarios, replay traces, train and evaluate the IDS, serve
// the control plane.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "canhil/attack/replay.hpp"
#include "canhil/ids/model_io.hpp"
#include "canhil/pipeline/corpus.hpp"
#include "canhil/pipeline/replay_eval.hpp"
#include "canhil/service/scenario.hpp"
#include "canhil/service/server.hpp"

using namespace canhil;
using service::Json;

namespace {

constexpr int kExitFailed = 1;  // ran, but expectations failed
constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;

enum class Format { Table, Records };

std::string fmt_pct(double x) {
  if (std::isnan(x)) return "   n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * x);
  return buf;
}

std::string fmt_num(double x, int decimals = 1) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
  return buf;
}

void print_metrics(const monitor::MetricsReport& m, Format format, std::ostream& out) {
  if (format == Format::Records) {
    out << Json{{"type", "metrics"}, {"metrics", service::to_json(m)}}.dump() << "\n";
    return;
  }
  out << "confusion (rows: truth, columns: predicted)\n";
  out << "            Benign       DoS   Fuzzing     Spoof\n";
  for (TrafficClass t : kAllClasses) {
    char line[128];
    std::snprintf(line, sizeof line, "%-8s", std::string(to_string(t)).c_str());
    out << line;
    for (TrafficClass p : kAllClasses) {
      std::snprintf(line, sizeof line, "%10llu",
                    static_cast<unsigned long long>(m.confusion(index_of(t), index_of(p))));
      out << line;
    }
    out << "\n";
  }
  out << "\naccuracy " << fmt_pct(m.accuracy) << " %   windows " << m.total << "   misclassified "
      << m.misclassified << "   benign false positives " << m.false_positives << "\n\n";
  out << "class      precision  recall      F1   support\n";
  for (TrafficClass c : kAllClasses) {
    const auto& pc = m.per_class[index_of(c)];
    char line[128];
    std::snprintf(line, sizeof line, "%-8s   %s   %s  %s  %8llu\n", std::string(to_string(c)).c_str(),
                  fmt_pct(pc.precision).c_str(), fmt_pct(pc.recall).c_str(), fmt_pct(pc.f1).c_str(),
                  static_cast<unsigned long long>(pc.support));
    out << line;
  }
}

std::vector<ids::Strategy> strategies_of(const std::string& s) {
  if (s == "ecu") return {ids::Strategy::EcuCoupled};
  if (s == "controller") return {ids::Strategy::ControllerCoupled};
  return {ids::Strategy::EcuCoupled, ids::Strategy::ControllerCoupled};
}

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const auto i = static_cast<std::size_t>(q * static_cast<double>(sorted.size() - 1) + 0.5);
  return sorted[std::min(i, sorted.size() - 1)];
}

void print_latency(const pipeline::ReplayEvaluation& ev, Format format, std::ostream& out) {
  if (format == Format::Records) {
    for (const auto& run : ev.runs) {
      const auto& l = run.latencies_us;
      out << Json{{"type", "latency"},
                  {"strategy", ids::to_string(run.profile.strategy)},
                  {"end_to_end_us", run.profile.end_to_end_us()},
                  {"count", l.size()},
                  {"min_us", l.empty() ? 0.0 : l.front()},
                  {"p50_us", quantile(l, 0.5)},
                  {"p99_us", quantile(l, 0.99)},
                  {"max_us", l.empty() ? 0.0 : l.back()}}
                 .dump()
          << "\n";
    }
    return;
  }
  out << "\nlatency (us)        ";
  for (const auto& run : ev.runs) {
    char h[32];
    std::snprintf(h, sizeof h, "%18s", std::string(ids::to_string(run.profile.strategy)).c_str());
    out << h;
  }
  out << "\n";
  auto row = [&](const char* name, auto get) {
    char h[32];
    std::snprintf(h, sizeof h, "%-20s", name);
    out << h;
    for (const auto& run : ev.runs) {
      std::snprintf(h, sizeof h, "%18s", fmt_num(get(run)).c_str());
      out << h;
    }
    out << "\n";
  };
  row("configured e2e", [](const auto& r) { return r.profile.end_to_end_us(); });
  row("min", [](const auto& r) { return r.latencies_us.empty() ? 0.0 : r.latencies_us.front(); });
  row("p50", [](const auto& r) { return quantile(r.latencies_us, 0.5); });
  row("p99", [](const auto& r) { return quantile(r.latencies_us, 0.99); });
  row("max", [](const auto& r) { return r.latencies_us.empty() ? 0.0 : r.latencies_us.back(); });
  row("line-rate budget", [](const auto& r) { return ids::line_rate_budget_us(r.profile.frame_receive_us); });
  if (ev.runs.size() == 2) {
    out << "ratio ecu/controller " << fmt_num(ev.runs[0].profile.end_to_end_us() / ev.runs[1].profile.end_to_end_us(), 2)
        << "x\n";
  }
}

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed, std::optional<std::uint32_t> bitrate,
            std::string out_dir, Format format) {
  service::ScenarioConfig config = service::load_scenario(path);
  if (seed) config.seed = *seed;
  if (bitrate) {
    config.bitrate.bits_per_second = *bitrate;
    service::validate(config);
  }
  const service::ReportBundle bundle = service::run_scenario(config);
  if (out_dir.empty()) out_dir = "report-" + config.name;
  service::write_bundle(bundle, out_dir);

  if (format == Format::Records) {
    for (const auto& r : bundle.expectations) {
      std::cout << Json{{"type", "expectation"}, {"step", r.step}, {"expect", r.description},
                        {"passed", r.passed}, {"detail", r.detail}}
                       .dump()
                << "\n";
    }
    std::cout << Json{{"type", "summary"}, {"scenario", config.name}, {"report", out_dir},
                      {"frames", bundle.stats.frames}, {"passed", bundle.passed()}}
                     .dump()
              << "\n";
  } else {
    std::cout << config.name << ": " << bundle.stats.frames << " frames, seed " << config.seed << ", report in "
              << out_dir << "\n";
    for (const auto& r : bundle.expectations) {
      std::cout << (r.passed ? "  PASS  " : "  FAIL  ") << "step " << r.step << ": " << r.description << " ("
                << r.detail << ")\n";
    }
  }
  return bundle.passed() ? 0 : kExitFailed;
}

int cmd_replay(const std::string& trace_path, const std::string& model_path, const std::string& strategy,
               std::uint32_t bitrate, Format format) {
  const attack::ReplayTrace trace = attack::load_replay(trace_path);
  const ids::QuantMlpModel model = ids::load_quant_model(model_path);
  const auto cal = ids::paper_artix7();
  std::vector<ids::CostProfile> profiles;
  for (auto s : strategies_of(strategy)) profiles.push_back(cal.get(s));
  const auto ev = pipeline::evaluate_replay(trace, &model, profiles, Bitrate{bitrate});
  if (format == Format::Table) {
    const auto h = trace.histogram();
    std::cout << trace.records.size() << " records: " << h[0] << " benign, " << h[1] << " DoS, " << h[2]
              << " fuzzing, " << h[3] << " spoof\n\n";
  }
  print_metrics(ev.metrics, format, std::cout);
  print_latency(ev, format, std::cout);
  return 0;
}

int cmd_train(std::uint64_t seed, std::size_t messages, std::size_t epochs, std::size_t qat_epochs,
              const std::string& out_float, const std::string& out_quant, Format format) {
  pipeline::PipelineOptions o;
  o.corpus.seed = seed;
  o.corpus.messages = messages;
  o.train.seed = seed;
  o.train.epochs = epochs;
  o.train.quant_aware_epochs = qat_epochs;
  const auto r = pipeline::run_pipeline(o);
  if (!out_float.empty()) ids::save(r.mlp, out_float);
  if (!out_quant.empty()) ids::save(r.quant.model, out_quant);
  if (format == Format::Records) {
    std::cout << Json{{"type", "train"},
                      {"train_windows", r.train_windows},
                      {"test_windows", r.test_windows},
                      {"float_accuracy", r.float_test.accuracy},
                      {"int4_accuracy", r.quant_test.accuracy},
                      {"int4_false_positive_rate", pipeline::false_positive_rate(r.quant_test)}}
                     .dump()
              << "\n";
    print_metrics(r.quant_test, format, std::cout);
    return 0;
  }
  std::cout << "corpus seed " << seed << ": " << r.train_windows << " training / " << r.test_windows
            << " held-out windows\n";
  std::cout << "float held-out accuracy " << fmt_pct(r.float_test.accuracy) << " %\n";
  std::cout << "int4  held-out accuracy " << fmt_pct(r.quant_test.accuracy) << " %, false-positive rate "
            << fmt_pct(pipeline::false_positive_rate(r.quant_test)) << " %\n\n";
  print_metrics(r.quant_test, format, std::cout);
  return 0;
}

int cmd_quantise(const std::string& in, const std::string& out, Format format) {
  const ids::FloatMlp mlp = ids::load_float_model(in);
  const auto q = ids::quantise_model(mlp);
  ids::save(q.model, out);
  if (format == Format::Records) {
    std::cout << Json{{"type", "quantise"}, {"out", out}, {"max_weight_error", q.max_weight_error}}.dump() << "\n";
    return 0;
  }
  std::cout << "wrote " << out << "\nlayer  max |w - q*scale|\n";
  for (std::size_t i = 0; i < q.max_weight_error.size(); ++i) {
    std::cout << "  " << i << "    " << fmt_num(q.max_weight_error[i], 6) << "\n";
  }
  return 0;
}

// Predictions file: "truth,predicted" per line; '#' starts a comment.
monitor::MetricsReport read_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  monitor::MetricsAccumulator acc;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.find(',');
    auto t = comma == std::string::npos ? std::nullopt : parse_traffic_class(line.substr(0, comma));
    auto p = comma == std::string::npos ? std::nullopt : parse_traffic_class(line.substr(comma + 1));
    if (!t || !p) throw Error(ErrorCode::ParseError, path + ":" + std::to_string(n) + ": expected truth,predicted");
    acc.add(*t, *p);
  }
  if (acc.confusion().sum() == 0) throw Error(ErrorCode::EmptyTrace, path + ": no predictions");
  return acc.report();
}

int cmd_eval(const std::string& predictions, const std::string& model_path, const std::string& trace_path,
             Format format) {
  if (!predictions.empty()) {
    print_metrics(read_predictions(predictions), format, std::cout);
    return 0;
  }
  if (model_path.empty() || trace_path.empty()) {
    throw CLI::ValidationError("eval", "needs --predictions, or --model with --trace");
  }
  const auto trace = attack::load_replay(trace_path);
  const auto model = ids::load_quant_model(model_path);
  std::vector<can::CanFrame> frames;
  std::vector<TrafficClass> labels;
  for (const auto& r : trace.records) {
    frames.push_back(r.frame);
    labels.push_back(r.label);
  }
  print_metrics(ids::evaluate(model, ids::make_windows(frames, labels)), format, std::cout);
  return 0;
}

int cmd_report(const std::string& dir, Format format) {
  auto read = [&](const char* name) -> std::optional<Json> {
    const auto path = std::filesystem::path(dir) / name;
    if (!std::filesystem::exists(path)) return std::nullopt;
    return Json::parse(ids::read_text_file(path));
  };
  auto summary = read("summary.json");
  if (!summary) throw Error(ErrorCode::ValidationError, "not a report bundle: " + dir);
  auto expectations = read("expectations.json");
  auto metrics = read("metrics.json");
  auto latency = read("latency.json");
  if (format == Format::Records) {
    std::cout << Json{{"type", "summary"}, {"summary", *summary}}.dump() << "\n";
    if (expectations) std::cout << Json{{"type", "expectations"}, {"expectations", *expectations}}.dump() << "\n";
    if (metrics) std::cout << Json{{"type", "metrics"}, {"metrics", *metrics}}.dump() << "\n";
    if (latency) std::cout << Json{{"type", "latency"}, {"latency", *latency}}.dump() << "\n";
    return 0;
  }
  const Json& s = *summary;
  std::cout << s.value("scenario", "?") << "  seed " << s.value("seed", 0) << "  " << s.value("frames", 0)
            << " frames  " << s.value("errors", 0) << " bus errors  "
            << (s.value("passed", false) ? "PASSED" : "FAILED") << "\n";
  if (expectations) {
    for (const auto& e : *expectations) {
      std::cout << (e.value("passed", false) ? "  PASS  " : "  FAIL  ") << e.value("expect", "") << " ("
                << e.value("detail", "") << ")\n";
    }
  }
  if (metrics) {
    std::cout << "\nIDS accuracy " << fmt_pct(metrics->value("accuracy", 0.0)) << " % over "
              << metrics->value("total", 0) << " windows\n";
  }
  if (latency && latency->contains("strategies")) {
    for (const auto& [name, l] : latency->at("strategies").items()) {
      std::cout << "  " << name << ": e2e " << fmt_num(l.value("configured_end_to_end_us", 0.0)) << " us, budget "
                << fmt_num(l.value("line_rate_budget_us", 0.0)) << " us\n";
    }
  }
  return 0;
}

int cmd_serve(const std::string& host, int port, int http_port, const std::string& scenario,
              const std::string& static_dir) {
  service::ServiceOptions opts;
  if (const char* t = std::getenv("CANHIL_TOKEN")) opts.token = t;
  service::ControlService svc(opts);
  if (!scenario.empty()) {
    const Json r = svc.handle_command({{"op", "load_scenario"}, {"args", {{"path", scenario}}}});
    if (!r.value("ok", false)) throw Error(ErrorCode::ValidationError, r.at("error").value("message", ""));
  }
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  service::NdjsonServer tcp(svc);
  tcp.start(host, port);
  std::cerr << "ndjson on " << host << ":" << tcp.port() << "\n";
  service::HttpGateway http(svc);
  if (http_port >= 0) {
    http.start(host, http_port, static_dir);
    std::cerr << "http on " << host << ":" << http.port() << "\n";
  }
  if (!opts.token.empty()) std::cerr << "token required (CANHIL_TOKEN)\n";
  int sig = 0;
  sigwait(&set, &sig);
  http.stop();
  tcp.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CAN bus hardware-in-the-loop simulator"};
  app.require_subcommand(1);

  std::string format_name = "table";
  app.add_option("--format", format_name, "Output: table or records")
      ->check(CLI::IsMember({"table", "records"}));

  std::optional<std::uint64_t> seed;
  std::uint32_t bitrate = kDefaultBitrate.bits_per_second;
  std::string strategy = "both";

  auto* run = app.add_subcommand("run", "Run a scenario and write its report bundle");
  std::string scenario_path, out_dir;
  std::optional<std::uint32_t> run_bitrate;
  run->add_option("scenario", scenario_path, "Scenario file")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--bitrate", run_bitrate, "Override the bus bitrate (bit/s)");
  run->add_option("--out", out_dir, "Report directory");

  auto* replay = app.add_subcommand("replay", "Replay a CSV trace through the IDS");
  std::string trace_path, model_path;
  replay->add_option("trace", trace_path, "Trace file")->required();
  replay->add_option("--model", model_path, "Quantised model file")->required();
  replay->add_option("--strategy", strategy, "ecu, controller or both")
      ->check(CLI::IsMember({"ecu", "controller", "both"}));
  replay->add_option("--bitrate", bitrate, "Bus bitrate (bit/s)");

  auto* serve = app.add_subcommand("serve", "Start the control service");
  std::string host = "127.0.0.1", static_dir;
  int port = 7470, http_port = 7471;
  serve->add_option("--host", host, "Listen address");
  serve->add_option("--port", port, "NDJSON port");
  serve->add_option("--http-port", http_port, "HTTP port (-1 disables)");
  serve->add_option("--scenario", scenario_path, "Scenario to load at start");
  serve->add_option("--static", static_dir, "Directory served at /");

  auto* train = app.add_subcommand("train", "Train and quantise the IDS on a simulated corpus");
  std::size_t messages = 20'000, epochs = ids::TrainOptions{}.epochs, qat_epochs = ids::TrainOptions{}.quant_aware_epochs;
  std::string out_float, out_quant;
  train->add_option("--seed", seed, "Corpus and training seed (default 1)");
  train->add_option("--messages", messages, "Corpus size");
  train->add_option("--epochs", epochs, "Float epochs");
  train->add_option("--qat-epochs", qat_epochs, "Quantisation-aware epochs");
  train->add_option("--out-float", out_float, "Float model file");
  train->add_option("--out", out_quant, "Quantised model file");

  auto* quantise = app.add_subcommand("quantise", "Quantise a float model to int4");
  std::string float_in, quant_out;
  quantise->add_option("model", float_in, "Float model file")->required();
  quantise->add_option("--out", quant_out, "Quantised model file")->required();

  auto* eval = app.add_subcommand("eval", "Metrics from predictions or from a model over a trace");
  std::string predictions;
  eval->add_option("--predictions", predictions, "CSV of truth,predicted");
  eval->add_option("--model", model_path, "Quantised model file");
  eval->add_option("--trace", trace_path, "Trace file");

  auto* report = app.add_subcommand("report", "Render a report bundle");
  std::string report_dir;
  report->add_option("dir", report_dir, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }
  const Format format = format_name == "records" ? Format::Records : Format::Table;

  try {
    if (*run) return cmd_run(scenario_path, seed, run_bitrate, out_dir, format);
    if (*replay) return cmd_replay(trace_path, model_path, strategy, bitrate, format);
    if (*serve) return cmd_serve(host, port, http_port, scenario_path, static_dir);
    if (*train) return cmd_train(seed.value_or(1), messages, epochs, qat_epochs, out_float, out_quant, format);
    if (*quantise) return cmd_quantise(float_in, quant_out, format);
    if (*eval) return cmd_eval(predictions, model_path, trace_path, format);
    if (*report) return cmd_report(report_dir, format);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "usage: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return e.code() == ErrorCode::IoError || e.code() == ErrorCode::ModelNotLoaded ? kExitFailed : kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error [ParseError]: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}
