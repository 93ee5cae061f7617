#include "odergru/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "odergru/errors.hpp"

namespace odergru {

std::vector<std::size_t> Dataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) out.push_back(i);
  return out;
}

void Dataset::validate() const {
  const std::size_t n = sequences.size();
  if (ids.size() != n || labels.size() != n || split.size() != n)
    throw DataError("dataset '" + name + "': ids/labels/split lengths disagree with sequence count");
  for (std::size_t i = 0; i < n; ++i) {
    if (sequences[i].channels != channels)
      throw DataError("sequence " + ids[i] + ": " + std::to_string(sequences[i].channels) + " channels, dataset has " +
                      std::to_string(channels));
    sequences[i].validate();
    if (labels[i] < -1 || (labels[i] >= 0 && std::size_t(labels[i]) >= classes))
      throw DataError("sequence " + ids[i] + ": label " + std::to_string(labels[i]) + " outside [0, " +
                      std::to_string(classes) + ")");
  }
}

bool operator==(const Dataset& a, const Dataset& b) {
  // name is not part of the stored content
  if (a.channels != b.channels || a.classes != b.classes || a.ids != b.ids ||
      a.labels != b.labels || a.split != b.split || a.sequences.size() != b.sequences.size())
    return false;
  for (std::size_t i = 0; i < a.sequences.size(); ++i) {
    const auto& x = a.sequences[i];
    const auto& y = b.sequences[i];
    if (x.channels != y.channels || x.samples.size() != y.samples.size()) return false;
    for (std::size_t k = 0; k < x.samples.size(); ++k) {
      const auto& s = x.samples[k];
      const auto& r = y.samples[k];
      if (s.t != r.t || s.observed != r.observed) return false;
      for (std::size_t c = 0; c < s.values.size(); ++c)
        if (s.observed[c] && s.values[c] != r.values[c]) return false;
    }
  }
  return true;
}

// --- CSV --------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::string fmt(double x) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);  // shortest round-trip form
  return std::string(buf, p);
}

struct PendingRow {
  double t;
  std::size_t line;
  Sample sample;
};

}  // namespace

Dataset parse_csv(const std::string& text, const CsvSchema& schema, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;

  auto fail = [&](const std::string& msg) { throw DataError(source + ":" + std::to_string(lineno) + ": " + msg); };

  if (!std::getline(in, line)) throw DataError(source + ": empty file (header row required)");
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_fields(line);

  long col_id = -1, col_t = -1, col_label = -1, col_split = -1;
  std::vector<std::size_t> col_ch;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string_view h = header[c];
    if (h == schema.seq_id) col_id = long(c);
    else if (h == schema.time) col_t = long(c);
    else if (h == schema.label) col_label = long(c);
    else if (h == schema.split) col_split = long(c);
    else if (h.starts_with(schema.channel_prefix)) col_ch.push_back(c);
    else fail("unknown column '" + std::string(h) + "'");
  }
  if (col_id < 0) fail("missing sequence-id column '" + schema.seq_id + "'");
  if (col_t < 0) fail("missing timestamp column '" + schema.time + "'");
  if (col_ch.empty()) fail("no channel columns (prefix '" + schema.channel_prefix + "')");

  Dataset ds;
  ds.name = source;
  ds.channels = col_ch.size();
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<std::vector<PendingRow>> rows;
  std::vector<std::pair<int, std::size_t>> label_seen;  // value, line of first sighting
  std::vector<long> split_seen;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_fields(line);
    if (f.size() != header.size())
      fail(std::to_string(f.size()) + " fields, header has " + std::to_string(header.size()));

    std::string id(f[std::size_t(col_id)]);
    if (id.empty()) fail("empty sequence id");
    auto [it, fresh] = slot.emplace(id, rows.size());
    if (fresh) {
      rows.emplace_back();
      ds.ids.push_back(id);
      label_seen.emplace_back(-1, 0);
      split_seen.push_back(-1);
    }
    const std::size_t s = it->second;

    double t;
    if (!parse_double(f[std::size_t(col_t)], t) || !std::isfinite(t))
      fail("bad timestamp '" + std::string(f[std::size_t(col_t)]) + "'");

    Sample smp;
    smp.t = t;
    smp.values.assign(col_ch.size(), 0.0);
    smp.observed.assign(col_ch.size(), 0);
    for (std::size_t c = 0; c < col_ch.size(); ++c) {
      std::string_view cell = f[col_ch[c]];
      if (cell.empty()) continue;
      if (!parse_double(cell, smp.values[c]) || !std::isfinite(smp.values[c]))
        fail("bad value '" + std::string(cell) + "' in column " + std::string(header[col_ch[c]]));
      smp.observed[c] = 1;
    }

    if (col_label >= 0) {
      std::string_view cell = f[std::size_t(col_label)];
      int lab = -1;
      if (!cell.empty() && (!parse_int(cell, lab) || lab < 0)) fail("bad label '" + std::string(cell) + "'");
      if (label_seen[s].second == 0) label_seen[s] = {lab, lineno};
      else if (label_seen[s].first != lab)
        fail("label of sequence " + id + " changes from " + std::to_string(label_seen[s].first) + " to " +
             std::to_string(lab));
    }
    if (col_split >= 0) {
      std::string_view cell = f[std::size_t(col_split)];
      long sp;
      if (cell == "train") sp = 0;
      else if (cell == "test") sp = 1;
      else fail("bad split '" + std::string(cell) + "' (expected train or test)");
      if (split_seen[s] < 0) split_seen[s] = sp;
      else if (split_seen[s] != sp) fail("split of sequence " + id + " changes");
    }
    rows[s].push_back({t, lineno, std::move(smp)});
  }

  int max_label = -1;
  for (std::size_t s = 0; s < rows.size(); ++s) {
    auto& r = rows[s];
    std::stable_sort(r.begin(), r.end(), [](const PendingRow& a, const PendingRow& b) { return a.t < b.t; });
    TimedSequence seq;
    seq.channels = ds.channels;
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (k > 0 && r[k].t == r[k - 1].t)
        throw DataError(source + ":" + std::to_string(r[k].line) + ": duplicate timestamp " + fmt(r[k].t) +
                        " in sequence " + ds.ids[s]);
      if (std::none_of(r[k].sample.observed.begin(), r[k].sample.observed.end(), [](auto o) { return o != 0; }))
        throw DataError(source + ":" + std::to_string(r[k].line) + ": row has no observed channel");
      seq.samples.push_back(std::move(r[k].sample));
    }
    ds.sequences.push_back(std::move(seq));
    ds.labels.push_back(label_seen[s].first);
    max_label = std::max(max_label, label_seen[s].first);
    ds.split.push_back(split_seen[s] == 1 ? Split::test : Split::train);
  }
  ds.classes = std::size_t(max_label + 1);
  ds.validate();
  return ds;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  Dataset ds = parse_csv(ss.str(), schema, path.string());
  ds.name = path.stem().string();
  return ds;
}

std::string format_csv(const Dataset& ds) {
  ds.validate();
  std::string out = "seq_id,t";
  for (std::size_t c = 0; c < ds.channels; ++c) out += ",ch_" + std::to_string(c);
  out += ",label,split\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string tail =
        "," + (ds.labels[i] >= 0 ? std::to_string(ds.labels[i]) : std::string()) +
        (ds.split[i] == Split::test ? ",test\n" : ",train\n");
    for (const Sample& s : ds.sequences[i].samples) {
      out += ds.ids[i];
      out += ',';
      out += fmt(s.t);
      for (std::size_t c = 0; c < ds.channels; ++c) {
        out += ',';
        if (s.observed[c]) out += fmt(s.values[c]);
      }
      out += tail;
    }
  }
  return out;
}

void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f << format_csv(ds);
  if (!f) throw DataError("write failed: " + path.string());
}

// --- corruption -------------------------------------------------------------

Dataset drop_observations(const Dataset& ds, double fraction, std::uint64_t seed, DropReport* report) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw std::invalid_argument("drop fraction must lie in [0, 1)");
  ds.validate();
  DropReport rep;
  Dataset out = ds;
  out.ids.clear();
  out.sequences.clear();
  out.labels.clear();
  out.split.clear();

  for (std::size_t i = 0; i < ds.size(); ++i) {
    TimedSequence seq = ds.sequences[i];
    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t k = 0; k < seq.samples.size(); ++k)
      for (std::size_t c = 0; c < seq.channels; ++c)
        if (seq.samples[k].observed[c]) cells.emplace_back(k, c);
    rep.cells_before += cells.size();

    const auto n_drop = static_cast<std::size_t>(std::llround(fraction * double(cells.size())));
    if (n_drop > 0) {
      std::seed_seq ss{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(i), std::uint32_t(i >> 32)};
      std::mt19937_64 rng(ss);
      // partial Fisher-Yates: the first n_drop slots are a uniform subset
      for (std::size_t k = 0; k < n_drop; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, cells.size() - 1);
        std::swap(cells[k], cells[pick(rng)]);
        auto [row, ch] = cells[k];
        seq.samples[row].observed[ch] = 0;
        seq.samples[row].values[ch] = 0.0;
      }
      rep.cells_dropped += n_drop;
      const std::size_t before = seq.samples.size();
      std::erase_if(seq.samples, [](const Sample& s) {
        return std::none_of(s.observed.begin(), s.observed.end(), [](auto o) { return o != 0; });
      });
      rep.timesteps_removed += before - seq.samples.size();
    }
    if (seq.samples.size() < 2) {
      ++rep.sequences_removed;
      continue;
    }
    out.ids.push_back(ds.ids[i]);
    out.sequences.push_back(std::move(seq));
    out.labels.push_back(ds.labels[i]);
    out.split.push_back(ds.split[i]);
  }
  if (report) *report = rep;
  return out;
}

// --- synthetic data ---------------------------------------------------------

namespace {

CholeskyPoint random_factor(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> off(0.0, 0.5);
  std::uniform_real_distribution<double> logdiag(-0.7, 0.7);
  std::vector<double> e(packed_size(d));
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) e[packed_index(i, j)] = (i == j) ? std::exp(logdiag(rng)) : off(rng);
  return CholeskyPoint(d, std::move(e));
}

}  // namespace

std::vector<SynthClass> synth_classes(const SynthSpec& spec) {
  if (spec.classes == 0 || spec.channels == 0) throw std::invalid_argument("synth: classes and channels must be > 0");
  std::mt19937_64 rng(spec.seed ^ 0x5eedc1a55ULL);
  std::vector<SynthClass> out;
  CholeskyPoint shared_a = random_factor(spec.channels, rng);
  CholeskyPoint shared_b = random_factor(spec.channels, rng);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    SynthClass k;
    if (spec.shared_endpoints) {
      k.start = shared_a;
      k.end = shared_b;
    } else {
      k.start = random_factor(spec.channels, rng);
      k.end = random_factor(spec.channels, rng);
    }
    // speeds spread over [0.5, 1.5]
    k.speed = spec.classes == 1 ? 1.0 : 0.5 + double(c) / double(spec.classes - 1);
    out.push_back(std::move(k));
  }
  return out;
}

CholeskyPoint synth_factor(const SynthClass& c, double t, std::size_t length) {
  const double s = c.speed * t / double(length);
  TangentLower v = log_map(c.start, c.end);
  for (double& x : v.entries()) x *= s;
  return exp_map(c.start, v);
}

Dataset synth_manifold_sequences(const SynthSpec& spec) {
  if (spec.length == 0 || spec.n_per_class == 0) throw std::invalid_argument("synth: empty dataset requested");
  if (!(spec.test_fraction >= 0.0 && spec.test_fraction < 1.0))
    throw std::invalid_argument("synth: test_fraction must lie in [0, 1)");
  const auto cls = synth_classes(spec);
  const std::size_t every = spec.test_fraction > 0.0 ? std::size_t(std::llround(1.0 / spec.test_fraction)) : 0;

  Dataset ds;
  ds.name = "synth";
  ds.channels = spec.channels;
  ds.classes = spec.classes;
  for (std::size_t k = 0; k < spec.n_per_class; ++k) {
    for (std::size_t c = 0; c < spec.classes; ++c) {
      std::seed_seq ss{std::uint32_t(spec.seed), std::uint32_t(spec.seed >> 32), std::uint32_t(c),
                       std::uint32_t(k)};
      std::mt19937_64 rng(ss);
      std::normal_distribution<double> n01(0.0, 1.0);
      TimedSequence seq;
      seq.channels = spec.channels;
      for (std::size_t i = 0; i < spec.length; ++i) {
        const double t = double(i);
        const CholeskyPoint l = synth_factor(cls[c], t, spec.length);
        Eigen::VectorXd z(spec.channels);
        for (auto& v : z) v = n01(rng);
        Eigen::VectorXd x = l.dense() * z;
        Sample s;
        s.t = t;
        s.values.resize(spec.channels);
        s.observed.assign(spec.channels, 1);
        for (std::size_t ch = 0; ch < spec.channels; ++ch) s.values[ch] = x[Eigen::Index(ch)] + spec.sigma_obs * n01(rng);
        seq.samples.push_back(std::move(s));
      }
      ds.ids.push_back("c" + std::to_string(c) + "_" + std::to_string(k));
      ds.sequences.push_back(std::move(seq));
      ds.labels.push_back(int(c));
      ds.split.push_back(every > 0 && k % every == every - 1 ? Split::test : Split::train);
    }
  }
  return ds;
}

// --- metrics ----------------------------------------------------------------

ClassificationMetrics classification_metrics(std::span<const int> predicted, std::span<const int> truth,
                                             std::size_t classes) {
  if (predicted.size() != truth.size()) throw DimensionMismatch("metrics: prediction/target lengths differ");
  if (truth.empty()) throw DataError("metrics: empty inputs");
  if (classes == 0) throw std::invalid_argument("metrics: classes must be > 0");
  std::vector<std::vector<double>> cm(classes, std::vector<double>(classes, 0.0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || std::size_t(truth[i]) >= classes || predicted[i] < 0 || std::size_t(predicted[i]) >= classes)
      throw DataError("metrics: class index out of range at " + std::to_string(i));
    cm[std::size_t(truth[i])][std::size_t(predicted[i])] += 1.0;
  }
  const double n = double(truth.size());
  ClassificationMetrics m;
  m.n = truth.size();
  double diag = 0.0, pe = 0.0, f1_sum = 0.0;
  std::size_t f1_count = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    double row = 0.0, col = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
      row += cm[c][k];
      col += cm[k][c];
    }
    diag += cm[c][c];
    pe += (row / n) * (col / n);
    if (row + col > 0.0) {
      f1_sum += 2.0 * cm[c][c] / (row + col);
      ++f1_count;
    }
  }
  m.accuracy = diag / n;
  m.kappa = pe < 1.0 ? (m.accuracy - pe) / (1.0 - pe) : (m.accuracy == 1.0 ? 1.0 : 0.0);
  m.macro_f1 = f1_sum / double(f1_count);
  return m;
}

RegressionMetrics regression_metrics(std::span<const double> predicted, std::span<const double> truth,
                                     std::span<const std::uint8_t> mask) {
  if (predicted.size() != truth.size() || (!mask.empty() && mask.size() != truth.size()))
    throw DimensionMismatch("metrics: prediction/target/mask lengths differ");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (mask.empty() || mask[i]) {
      sum += truth[i];
      ++n;
    }
  if (n == 0) throw DataError("metrics: no entries selected");
  const double mean = sum / double(n);
  double ss_res = 0.0, ss_tot = 0.0, ape = 0.0;
  std::size_t n_ape = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!(mask.empty() || mask[i])) continue;
    const double e = predicted[i] - truth[i];
    ss_res += e * e;
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
    if (truth[i] != 0.0) {
      ape += std::abs(e / truth[i]);
      ++n_ape;
    }
  }
  RegressionMetrics m;
  m.n = n;
  m.mse = ss_res / double(n);
  m.mape = n_ape ? 100.0 * ape / double(n_ape) : 0.0;
  m.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return m;
}

}  // namespace odergru
