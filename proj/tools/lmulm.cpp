// lmulm: LMU language-model toolkit.
//
// Subcommands: discretize, run, train, eval, flops, bench, fit-powerlaw,
// reference. Numeric work runs in f64 for inspection commands and f32 for
// training unless overridden by LMU_PRECISION={f32|f64} or, where a
// checkpoint is involved, by the checkpoint's own precision tag.

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lmu/checkpoint.hpp"
#include "lmu/costmodel.hpp"
#include "lmu/kvconfig.hpp"
#include "lmu/powerlaw.hpp"
#include "lmu/train.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw lmu::Error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string env_precision(const std::string& fallback) {
  const char* env = std::getenv("LMU_PRECISION");
  if (!env) return fallback;
  const std::string v(env);
  if (v != "f32" && v != "f64")
    throw lmu::ConfigError("LMU_PRECISION must be f32 or f64, got '" + v + "'");
  return v;
}

lmu::Backend backend_from(const std::string& name) {
  if (name == "ss") return lmu::Backend::state_space;
  if (name == "rk") return lmu::Backend::rk;
  if (name == "fft") return lmu::Backend::fft;
  throw lmu::ConfigError("unknown backend '" + name + "' (expected ss, rk or fft)");
}

// ---------------------------------------------------------------------------
// discretize: dump A_bar, B_bar and H columns as CSV
// ---------------------------------------------------------------------------

int cmd_discretize(double theta, std::int64_t q, std::int64_t n) {
  const auto cfg = lmu::LmuConfig::make(theta, q);
  const auto sys = lmu::discretize_zoh(lmu::build_continuous<double>(cfg));
  const auto imp = lmu::impulse_response(sys, n);
  std::cout << std::setprecision(17);
  std::cout << "matrix,row,col,value\n";
  for (std::int64_t i = 0; i < q; ++i)
    for (std::int64_t j = 0; j < q; ++j)
      std::cout << "A_bar," << i << ',' << j << ',' << sys.A_bar(i, j) << '\n';
  for (std::int64_t i = 0; i < q; ++i) std::cout << "B_bar," << i << ",0," << sys.B_bar[i] << '\n';
  for (std::int64_t i = 0; i < q; ++i)
    for (std::int64_t t = 0; t < n; ++t)
      std::cout << "H," << i << ',' << t << ',' << imp.H(i, t) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

template <typename T>
int train_with(const lmu::KvConfig& kv) {
  lmu::ModelConfig mc;
  mc.n = kv.get_int("n", 128);
  mc.vocab = lmu::kByteVocab;
  mc.d = kv.get_int("d", 32);
  mc.layers = kv.get_int("layers", 2);
  mc.d_prime = kv.get_int("d_prime", 4 * mc.d);
  mc.variant = lmu::variant_from_name(kv.get_str("variant", "lmu"));
  const std::int64_t q = kv.get_int("q", 32);
  const std::int64_t q_prime = kv.get_int("q_prime", lmu::LmuConfig::default_q_prime(q));
  mc.lmu = lmu::LmuConfig::make(kv.get_double("theta", static_cast<double>(mc.n)), q, q_prime);

  lmu::TrainConfig tc;
  tc.batch = kv.get_int("batch", 16);
  tc.steps = kv.get_int("steps", 2000);
  tc.warmup = kv.get_int("warmup", 100);
  tc.peak_lr = kv.get_double("peak_lr", 3e-4);
  tc.eval_interval = kv.get_int("eval_interval", 50);
  tc.val_fraction = kv.get_double("val_fraction", 0.1);
  tc.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  tc.threads = static_cast<int>(kv.get_int("threads", 1));

  const std::string corpus_path = kv.require_str("corpus");
  const std::string out = kv.get_str("checkpoint_out", "model.lmuc");
  const std::string history_out = kv.get_str("history_out", out + ".history.csv");
  const std::string positions_out = kv.get_str("positions_out", out + ".positions.csv");

  const auto corpus = lmu::pack_corpus({read_file(corpus_path)}, mc.n);
  std::cerr << "[lmulm] corpus: " << corpus.sequence_count() << " sequences of n = " << mc.n
            << ", " << corpus.unmasked_tokens() << " tokens\n";

  lmu::Trainer<T> trainer(lmu::Model<T>::init(mc, tc.seed), tc);
  const auto counts = trainer.model().count_params();
  std::cerr << "[lmulm] non-embedding parameters: " << counts.non_embedding << " (total "
            << counts.total << ")\n";
  const auto result = trainer.run(corpus);
  trainer.save(out);

  std::ofstream hist(history_out);
  lmu::write_history_csv(hist, result);
  std::ofstream pos(positions_out);
  lmu::write_per_position_csv(pos, result, result.history);
  std::cerr << "[lmulm] final validation loss: " << result.final_val_nats << " nats/token\n"
            << "[lmulm] wrote " << out << ", " << history_out << ", " << positions_out << '\n';
  return 0;
}

int cmd_train(const std::string& config_path) {
  static const std::set<std::string> allowed = {
      "n",       "d",     "layers",        "d_prime",      "variant", "q",
      "q_prime", "theta", "batch",         "steps",        "warmup",  "peak_lr",
      "eval_interval",    "val_fraction",  "seed",         "threads", "corpus",
      "checkpoint_out",   "history_out",   "positions_out", "precision"};
  const auto kv = lmu::KvConfig::parse_file(config_path, allowed);
  const std::string precision = env_precision(kv.get_str("precision", "f32"));
  return precision == "f64" ? train_with<double>(kv) : train_with<float>(kv);
}

// ---------------------------------------------------------------------------
// eval / run
// ---------------------------------------------------------------------------

template <typename T>
int eval_with(const std::string& checkpoint, const std::string& corpus_path) {
  auto model = lmu::load_model<T>(checkpoint);
  const auto corpus = lmu::pack_corpus({read_file(corpus_path)}, model.cfg.n);
  std::vector<double> per_pos;
  const double mean = lmu::evaluate_corpus(model, corpus, nullptr, &per_pos);
  std::cout << std::setprecision(10);
  std::cout << "mean_nats," << mean << '\n';
  std::cout << "position,loss_nats\n";
  for (std::size_t j = 0; j + 1 < per_pos.size(); ++j)
    std::cout << j + 1 << ',' << per_pos[j] << '\n';
  return 0;
}

template <typename T>
int run_with(const std::string& checkpoint, const std::string& input_path,
             const std::string& backend_name) {
  auto model = lmu::load_model<T>(checkpoint);
  const lmu::Backend backend = backend_from(backend_name);
  auto ids = lmu::tokenize(read_file(input_path));
  ids.resize(static_cast<std::size_t>(model.cfg.n), lmu::kSeparatorId);
  const auto logits = lmu::forward_plain(model, ids, backend);

  std::cout << std::setprecision(8);
  std::cout << "position,token,predicted_next,prob,next_loss_nats\n";
  const std::int64_t n = model.cfg.n, v = model.cfg.vocab;
  for (std::int64_t t = 0; t < n; ++t) {
    const T* row = logits.data() + t * v;
    std::int64_t best = 0;
    T mx = row[0];
    for (std::int64_t j = 1; j < v; ++j)
      if (row[j] > mx) {
        mx = row[j];
        best = j;
      }
    double sum = 0;
    for (std::int64_t j = 0; j < v; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
    const double prob = 1.0 / sum;
    std::cout << t + 1 << ',' << ids[static_cast<std::size_t>(t)] << ',' << best << ',' << prob;
    if (t + 1 < n) {
      const double loss =
          std::log(sum) - static_cast<double>(row[ids[static_cast<std::size_t>(t + 1)]] - mx);
      std::cout << ',' << loss;
    }
    std::cout << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// flops / bench
// ---------------------------------------------------------------------------

int cmd_flops(const lmu::CostParams& p) {
  const auto report = lmu::build_cost_report<double>(p);
  std::cout << "config: n=" << p.n << " d=" << p.d << " d'=" << p.d_prime << " q=" << p.q
            << " q'=" << p.q_prime << " r=" << p.r << "\n\n";
  auto print_rows = [](const std::vector<lmu::CostRow>& rows) {
    std::cout << std::left << std::setw(10) << "component" << std::right << std::setw(12)
              << "params" << std::setw(16) << "analytic" << std::setw(16) << "measured"
              << std::setw(10) << "ratio" << '\n';
    for (const auto& r : rows)
      std::cout << std::left << std::setw(10) << r.name << std::right << std::setw(12) << r.params
                << std::setw(16) << std::fixed << std::setprecision(1) << r.analytic
                << std::setw(16) << r.measured << std::setw(10) << std::setprecision(3) << r.ratio
                << '\n';
    std::cout << std::defaultfloat;
  };
  std::cout << "per-layer forward FLOPs per token:\n";
  print_rows(report.layer_rows);
  std::cout << std::left << std::setw(22) << "total" << std::right << std::setw(16) << std::fixed
            << std::setprecision(1) << report.analytic_total << std::setw(16)
            << report.measured_total << std::defaultfloat << "\n\n";
  std::cout << "LMU backend alternatives (per token; C is one length-n transform):\n";
  print_rows(report.backend_rows);

  std::cout << "\ncomponent,params,analytic,measured,ratio\n" << std::setprecision(10);
  for (const auto& r : report.layer_rows)
    std::cout << r.name << ',' << r.params << ',' << r.analytic << ',' << r.measured << ','
              << r.ratio << '\n';
  for (const auto& r : report.backend_rows)
    std::cout << r.name << ',' << r.params << ',' << r.analytic << ',' << r.measured << ','
              << r.ratio << '\n';
  return 0;
}

int cmd_bench(const std::string& backends_csv, std::int64_t nmin, std::int64_t nmax,
              std::int64_t d, std::int64_t q) {
  std::vector<std::string> backends;
  std::stringstream ss(backends_csv);
  std::string item;
  while (std::getline(ss, item, ',')) backends.push_back(item);
  std::vector<std::int64_t> ns;
  for (std::int64_t n = nmin; n <= nmax; n *= 2) ns.push_back(n);
  if (ns.size() < 2) throw lmu::ConfigError("bench: need at least two sizes between nmin and nmax");
  const auto report = lmu::scaling_sweep<double>(backends, ns, d, q);
  std::cout << std::setprecision(10);
  std::cout << "backend,n,flops,peak_live_values\n";
  for (const auto& pt : report.points)
    std::cout << pt.backend << ',' << pt.n << ',' << pt.flops << ',' << pt.peak_live << '\n';
  std::cout << "backend,log_log_compute_slope\n";
  for (const auto& [backend, slope] : report.compute_slopes)
    std::cout << backend << ',' << slope << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// fit-powerlaw / reference
// ---------------------------------------------------------------------------

int cmd_fit_powerlaw(const std::string& points_path) {
  std::ifstream f(points_path);
  if (!f) throw lmu::Error("cannot open '" + points_path + "'");
  std::vector<std::pair<double, double>> points;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("N,", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw lmu::DomainError("fit-powerlaw: expected 'N,loss' lines, got '" + line + "'");
    points.emplace_back(std::stod(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  const auto fit = lmu::fit_power_law(points);
  std::cout << std::setprecision(10) << "N_c," << fit.n_c << "\nalpha," << fit.alpha
            << "\nresidual_rms_log," << fit.residual << '\n';
  return 0;
}

int cmd_reference(const std::string& curve, double n, double s_ratio) {
  std::cout << std::setprecision(10) << lmu::reference_loss(curve, n, s_ratio) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LMU language model toolkit"};
  app.require_subcommand(1);

  double theta = 64.0;
  std::int64_t q = 16, n = 64;
  auto* discretize = app.add_subcommand("discretize", "dump A_bar, B_bar and H as CSV");
  discretize->add_option("--theta", theta, "window length in tokens");
  discretize->add_option("--q", q, "order");
  discretize->add_option("--n", n, "impulse response length");

  std::string config_path;
  auto* train = app.add_subcommand("train", "train a model from a key=value config");
  train->add_option("--config", config_path, "config file")->required();

  std::string checkpoint, corpus_path, input_path, backend = "fft";
  auto* eval = app.add_subcommand("eval", "per-position loss of a checkpoint on a corpus");
  eval->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval->add_option("--corpus", corpus_path, "corpus file")->required();

  auto* run = app.add_subcommand("run", "forward a byte file and print predictions");
  run->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  run->add_option("--input", input_path, "input byte file")->required();
  run->add_option("--backend", backend, "ss, rk or fft");

  lmu::CostParams cost;
  auto* flops = app.add_subcommand("flops", "analytic vs instrumented FLOPs per token");
  flops->add_option("--n", cost.n, "sequence length");
  flops->add_option("--d", cost.d, "embedding width");
  flops->add_option("--dprime", cost.d_prime, "FFN hidden width");
  flops->add_option("--q", cost.q, "order");
  flops->add_option("--qprime", cost.q_prime, "reduced order");
  flops->add_option("--r", cost.r, "Runge-Kutta order");

  std::string backends = "attention,ss,fft";
  std::int64_t nmin = 256, nmax = 8192, bench_d = 8, bench_q = 16;
  auto* bench = app.add_subcommand("bench", "complexity scaling sweep");
  bench->add_option("--backends", backends, "comma list: attention,ss,fft");
  bench->add_option("--nmin", nmin, "smallest sequence length (power of two)");
  bench->add_option("--nmax", nmax, "largest sequence length");
  bench->add_option("--d", bench_d, "channels");
  bench->add_option("--q", bench_q, "order");

  std::string points_path;
  auto* fitpl = app.add_subcommand("fit-powerlaw", "fit loss = (N/N_c)^-alpha to N,loss CSV");
  fitpl->add_option("--points", points_path, "CSV file of N,loss rows")->required();

  std::string curve = "lmu";
  double ref_n = 1e6, s_ratio = 0.0;
  auto* reference = app.add_subcommand("reference", "published scaling-curve loss at N");
  reference->add_option("--curve", curve, "transformer, lstm, lmu or lmu_g");
  reference->add_option("--N", ref_n, "non-embedding parameter count");
  reference->add_option("--s-ratio", s_ratio, "S/S_min ratio for the transformer data term");

  CLI11_PARSE(app, argc, argv);

  try {
    if (discretize->parsed()) return cmd_discretize(theta, q, n);
    if (train->parsed()) return cmd_train(config_path);
    if (eval->parsed()) {
      const int tag = lmu::checkpoint_precision(checkpoint);
      return tag == 8 ? eval_with<double>(checkpoint, corpus_path)
                      : eval_with<float>(checkpoint, corpus_path);
    }
    if (run->parsed()) {
      const int tag = lmu::checkpoint_precision(checkpoint);
      return tag == 8 ? run_with<double>(checkpoint, input_path, backend)
                      : run_with<float>(checkpoint, input_path, backend);
    }
    if (flops->parsed()) return cmd_flops(cost);
    if (bench->parsed()) return cmd_bench(backends, nmin, nmax, bench_d, bench_q);
    if (fitpl->parsed()) return cmd_fit_powerlaw(points_path);
    if (reference->parsed()) return cmd_reference(curve, ref_n, s_ratio);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
