#include "stanceforge/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <unordered_map>

#include "json.hpp"
#include "stanceforge/error.hpp"

namespace stanceforge {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(LogBase base) { return base == LogBase::Natural ? "natural" : "base2"; }

LogBase parse_log_base(std::string_view name) {
  if (name == "natural" || name == "e" || name == "ln") return LogBase::Natural;
  if (name == "base2" || name == "2" || name == "bits") return LogBase::Base2;
  throw ValidationError("unknown log base \"" + std::string(name) + "\" (expected natural|base2)");
}

namespace {

double entropy_of(const std::vector<std::string>& tokens, LogBase base) {
  std::unordered_map<std::string_view, std::size_t> counts;
  for (const auto& t : tokens) ++counts[t];
  const double n = static_cast<double>(tokens.size());
  double h = 0.0;
  for (const auto& [_, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  if (base == LogBase::Base2) h /= std::log(2.0);
  return std::max(0.0, h);
}

// Linear-interpolation quantile of sorted data.
double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double vec_norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  const double na = vec_norm(a), nb = vec_norm(b);
  if (na == 0.0 || nb == 0.0) throw ValidationError("class centroid has zero norm; cosine undefined");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// Per-class mean of unit-normalized vectors.
std::array<std::vector<double>, 2> class_centroids(const EmbeddingSet& set,
                                                   const std::map<std::string, StanceLabel>& labels,
                                                   const char* which) {
  std::array<std::vector<double>, 2> sums{std::vector<double>(set.dim(), 0.0), std::vector<double>(set.dim(), 0.0)};
  std::array<std::size_t, 2> counts{0, 0};
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto it = labels.find(set.id(i));
    if (it == labels.end()) continue;
    const int c = static_cast<int>(it->second);
    auto v = set.vector(i);
    double n = 0.0;
    for (float x : v) n += static_cast<double>(x) * x;
    n = std::sqrt(n);
    for (std::size_t j = 0; j < v.size(); ++j) sums[c][j] += v[j] / n;
    ++counts[c];
  }
  for (int c = 0; c < 2; ++c) {
    if (counts[c] == 0)
      throw ValidationError(std::string(which) + " set has no vectors labeled " +
                            std::string(to_string(static_cast<StanceLabel>(c))));
    for (auto& x : sums[c]) x /= static_cast<double>(counts[c]);
  }
  return sums;
}

// y = C x for a dense row-major d x d matrix.
std::vector<double> mat_vec(const std::vector<double>& c, const std::vector<double>& x) {
  const std::size_t d = x.size();
  std::vector<double> y(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = c.data() + i * d;
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += row[j] * x[j];
    y[i] = s;
  }
  return y;
}

void axpy(double a, const std::vector<double>& x, std::vector<double>& y) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

void scale(std::vector<double>& x, double a) {
  for (auto& v : x) v *= a;
}

// Modified Gram-Schmidt with a second pass. A column that collapses into
// the span of the earlier ones is replaced by the first unit axis that
// does not.
void orthonormalize(std::vector<std::vector<double>>& q) {
  const std::size_t d = q.front().size();
  std::size_t next_axis = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    auto& v = q[i];
    double before = vec_norm(v);
    for (;;) {
      for (int pass = 0; pass < 2; ++pass)
        for (std::size_t j = 0; j < i; ++j) axpy(-dot(q[j], v), q[j], v);
      const double n = vec_norm(v);
      if (n > 1e-10 * before && n > 0.0) {
        scale(v, 1.0 / n);
        break;
      }
      v.assign(d, 0.0);
      v[next_axis++ % d] = 1.0;
      before = 1.0;
    }
  }
}

// Eigen-decomposition of a small symmetric matrix by cyclic Jacobi
// rotations. Returns eigenvalues; `vecs` receives eigenvectors as columns.
std::vector<double> jacobi_eigen(std::vector<double> a, std::size_t n, std::vector<double>& vecs) {
  vecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) vecs[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, total = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        total += a[i * n + j] * a[i * n + j];
        if (i != j) off += a[i * n + j] * a[i * n + j];
      }
    if (off <= 1e-30 * total || off == 0.0) break;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t r = p + 1; r < n; ++r) {
        const double apr = a[p * n + r];
        if (apr == 0.0) continue;
        const double theta = (a[r * n + r] - a[p * n + p]) / (2.0 * apr);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akr = a[k * n + r];
          a[k * n + p] = c * akp - sn * akr;
          a[k * n + r] = sn * akp + c * akr;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], ark = a[r * n + k];
          a[p * n + k] = c * apk - sn * ark;
          a[r * n + k] = sn * apk + c * ark;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vecs[k * n + p], vkr = vecs[k * n + r];
          vecs[k * n + p] = c * vkp - sn * vkr;
          vecs[k * n + r] = sn * vkp + c * vkr;
        }
      }
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i * n + i];
  return values;
}

// Rayleigh-Ritz on span(q): the two Ritz pairs with the largest values.
struct RitzPair {
  std::array<double, 2> values;
  std::array<std::vector<double>, 2> vectors;
};

RitzPair top_ritz(const std::vector<std::vector<double>>& q, const std::vector<std::vector<double>>& cq) {
  const std::size_t b = q.size(), d = q.front().size();
  std::vector<double> h(b * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i; j < b; ++j) h[i * b + j] = h[j * b + i] = 0.5 * (dot(q[i], cq[j]) + dot(q[j], cq[i]));
  std::vector<double> w;
  const auto values = jacobi_eigen(h, b, w);
  std::vector<std::size_t> order(b);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return values[x] > values[y]; });
  RitzPair out;
  for (int k = 0; k < 2; ++k) {
    const std::size_t col = order[static_cast<std::size_t>(k)];
    out.values[k] = values[col];
    out.vectors[k].assign(d, 0.0);
    for (std::size_t i = 0; i < b; ++i) axpy(w[i * b + col], q[i], out.vectors[k]);
  }
  return out;
}

void fix_sign(std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  if (v[best] < 0) scale(v, -1.0);
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

double word_entropy(std::string_view text, LogBase base) {
  const auto tokens = tokenize(text);
  if (tokens.empty()) throw ValidationError("text has no word tokens");
  return entropy_of(tokens, base);
}

EntropySummary entropy_summary(const Corpus& corpus, LogBase base) {
  if (corpus.comments.empty()) throw ValidationError("entropy summary of an empty corpus");
  struct Item {
    double entropy;
    double length;
  };
  std::vector<Item> items;
  items.reserve(corpus.size());
  for (const auto& c : corpus.comments) {
    const auto tokens = tokenize(c.text);
    // A comment made only of punctuation has no words: entropy 0, length 0.
    items.push_back({tokens.empty() ? 0.0 : entropy_of(tokens, base), static_cast<double>(tokens.size())});
  }
  std::stable_sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.entropy < b.entropy; });

  const std::size_t n = items.size();
  EntropySummary s;
  s.log_base = base;
  s.total = n;
  s.rows[0] = {"min", items.front().entropy, items.front().length};
  static constexpr const char* kQuarterNames[4] = {"0-25%", "25-50%", "50-75%", "75-100%"};
  for (std::size_t q = 0; q < 4; ++q) {
    // Every quarter keeps at least one item so small corpora still fill all rows.
    const std::size_t begin = std::min(q * n / 4, n - 1);
    const std::size_t end = std::max((q + 1) * n / 4, begin + 1);
    double e = 0.0, len = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      e += items[i].entropy;
      len += items[i].length;
    }
    const double count = static_cast<double>(end - begin);
    s.rows[q + 1] = {kQuarterNames[q], e / count, len / count};
  }
  s.rows[5] = {"max", items.back().entropy, items.back().length};

  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = items[i].entropy;
  s.q1 = quantile(sorted, 0.25);
  s.q3 = quantile(sorted, 0.75);
  const double iqr = s.q3 - s.q1;
  const double lo = s.q1 - 1.5 * iqr, hi = s.q3 + 1.5 * iqr;
  s.outlier_count = static_cast<std::size_t>(
      std::count_if(sorted.begin(), sorted.end(), [&](double e) { return e < lo || e > hi; }));
  return s;
}

std::string format_entropy_summary(const EntropySummary& s) {
  ordered_json j;
  j["log_base"] = std::string(to_string(s.log_base));
  j["total"] = s.total;
  j["outlier_count"] = s.outlier_count;
  j["q1"] = s.q1;
  j["q3"] = s.q3;
  auto& rows = j["rows"] = ordered_json::array();
  for (const auto& r : s.rows)
    rows.push_back(ordered_json{{"range", r.range}, {"mean_entropy", r.mean_entropy}, {"mean_length", r.mean_length}});
  return j.dump(2) + "\n";
}

AlignmentReport alignment_report(const EmbeddingSet& real, const std::map<std::string, StanceLabel>& real_labels,
                                 const EmbeddingSet& synth, const std::map<std::string, StanceLabel>& synth_labels) {
  if (real.dim() != synth.dim())
    throw ValidationError("real and synthetic embeddings differ in dimension (" + std::to_string(real.dim()) +
                          " vs " + std::to_string(synth.dim()) + ")");
  auto rc = class_centroids(real, real_labels, "real");
  auto sc = class_centroids(synth, synth_labels, "synthetic");
  AlignmentReport report;
  double margin = 0.0;
  for (int c = 0; c < 2; ++c) {
    auto& pc = report.per_class[c];
    pc.real_centroid = rc[c];
    pc.synth_centroid = sc[c];
    pc.centroid_cosine = cosine(rc[c], sc[c]);
    pc.cross_cosine = cosine(rc[c], sc[1 - c]);
    const double m = pc.centroid_cosine - pc.cross_cosine;
    margin = c == 0 ? m : std::min(margin, m);
  }
  report.cross_class_margin = margin;
  return report;
}

std::string format_alignment_report(const AlignmentReport& r) {
  ordered_json j;
  j["cross_class_margin"] = r.cross_class_margin;
  auto& classes = j["classes"] = ordered_json::array();
  for (int c = 0; c < 2; ++c) {
    const auto& pc = r.per_class[c];
    classes.push_back(ordered_json{{"label", c},
                                   {"centroid_cosine", pc.centroid_cosine},
                                   {"cross_cosine", pc.cross_cosine},
                                   {"real_centroid", pc.real_centroid},
                                   {"synth_centroid", pc.synth_centroid}});
  }
  return j.dump(2) + "\n";
}

Projection project_2d(const EmbeddingSet& set) {
  const std::size_t n = set.size(), d = set.dim();
  if (n < 2) throw ValidationError("projection needs at least 2 vectors");

  Projection p;
  p.ids = set.ids();
  p.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto v = set.vector(i);
    for (std::size_t j = 0; j < d; ++j) p.mean[j] += v[j];
  }
  for (auto& m : p.mean) m /= static_cast<double>(n);

  std::vector<double> centered(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    auto v = set.vector(i);
    for (std::size_t j = 0; j < d; ++j) centered[i * d + j] = v[j] - p.mean[j];
  }
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = centered.data() + i * d;
    for (std::size_t a = 0; a < d; ++a) {
      if (x[a] == 0.0) continue;
      double* row = cov.data() + a * d;
      for (std::size_t b = 0; b < d; ++b) row[b] += x[a] * x[b];
    }
  }
  double frob = 0.0;
  for (auto& c : cov) {
    c /= static_cast<double>(n);
    frob += c * c;
  }
  frob = std::sqrt(frob);
  if (frob == 0.0) throw ValidationError("rank-0 data: all vectors are identical");

  // Subspace iteration on an oversampled block: the top-2 directions then
  // converge at rate lambda_{b+1}/lambda_2 instead of lambda_3/lambda_2,
  // which matters for nearly isotropic data.
  const std::size_t block = std::min(d, kPowerBlock);
  std::vector<std::vector<double>> q(block, std::vector<double>(d));
  for (std::size_t i = 0; i < block; ++i)
    for (std::size_t j = 0; j < d; ++j)
      q[i][j] = std::sin(1.0 + 12.9898 * static_cast<double>(i + 1) + 78.233 * static_cast<double>(j + 1));
  orthonormalize(q);

  std::vector<std::vector<double>> cq(block);
  RitzPair ritz;
  for (int it = 0;; ++it) {
    for (std::size_t i = 0; i < block; ++i) cq[i] = mat_vec(cov, q[i]);
    ritz = top_ritz(q, cq);
    if (it == kPowerIterations) break;
    double res = 0.0;
    for (int k = 0; k < 2; ++k) {
      auto r = mat_vec(cov, ritz.vectors[k]);
      axpy(-ritz.values[k], ritz.vectors[k], r);
      res += dot(r, r);
    }
    if (std::sqrt(res) <= kPowerTolerance * frob) break;
    q = cq;
    orthonormalize(q);
  }

  std::vector<std::vector<double>> axes = {ritz.vectors[0], ritz.vectors[1]};
  orthonormalize(axes);
  fix_sign(axes[0]);
  fix_sign(axes[1]);
  p.axes = {std::move(axes[0]), std::move(axes[1])};

  p.coords.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = centered.data() + i * d;
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      s1 += x[j] * p.axes[0][j];
      s2 += x[j] * p.axes[1][j];
    }
    p.coords[i] = {s1, s2};
  }
  return p;
}

std::string format_projection_csv(const Projection& p) {
  std::string out = "id,x,y\n";
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    std::string id = p.ids[i];
    if (id.find_first_of(",\"\n") != std::string::npos) {
      std::string quoted = "\"";
      for (char ch : id) {
        if (ch == '"') quoted += '"';
        quoted += ch;
      }
      id = quoted + "\"";
    }
    out += id + "," + fmt(p.coords[i][0], "%.9g") + "," + fmt(p.coords[i][1], "%.9g") + "\n";
  }
  return out;
}

std::string render_alignment_svg(const EmbeddingSet& real, const std::map<std::string, StanceLabel>& real_labels,
                                 const EmbeddingSet& synth, const std::map<std::string, StanceLabel>& synth_labels) {
  if (real.dim() != synth.dim()) throw ValidationError("real and synthetic embeddings differ in dimension");
  EmbeddingSet joint(real.dim());
  for (std::size_t i = 0; i < synth.size(); ++i) joint.add("s:" + synth.id(i), synth.vector(i));
  for (std::size_t i = 0; i < real.size(); ++i) joint.add("r:" + real.id(i), real.vector(i));
  const auto proj = project_2d(joint);

  struct Point {
    double x, y;
    int label;
  };
  std::vector<Point> synth_points;
  std::array<double, 2> sx{0, 0}, sy{0, 0};
  std::array<std::size_t, 2> sn{0, 0};
  for (std::size_t i = 0; i < joint.size(); ++i) {
    const auto& id = joint.id(i);
    const bool is_synth = id[0] == 's';
    const auto& labels = is_synth ? synth_labels : real_labels;
    auto it = labels.find(id.substr(2));
    if (it == labels.end()) continue;
    const int label = static_cast<int>(it->second);
    if (is_synth) {
      synth_points.push_back({proj.coords[i][0], proj.coords[i][1], label});
    } else {
      sx[label] += proj.coords[i][0];
      sy[label] += proj.coords[i][1];
      ++sn[label];
    }
  }
  for (int c = 0; c < 2; ++c) {
    if (sn[c] == 0)
      throw ValidationError("real set has no vectors labeled " + std::string(to_string(static_cast<StanceLabel>(c))));
    sx[c] /= static_cast<double>(sn[c]);
    sy[c] /= static_cast<double>(sn[c]);
  }

  double xmin = std::min(sx[0], sx[1]), xmax = std::max(sx[0], sx[1]);
  double ymin = std::min(sy[0], sy[1]), ymax = std::max(sy[0], sy[1]);
  for (const auto& pt : synth_points) {
    xmin = std::min(xmin, pt.x);
    xmax = std::max(xmax, pt.x);
    ymin = std::min(ymin, pt.y);
    ymax = std::max(ymax, pt.y);
  }
  const double size = 600.0, pad = 40.0;
  const double spanx = xmax > xmin ? xmax - xmin : 1.0;
  const double spany = ymax > ymin ? ymax - ymin : 1.0;
  auto px = [&](double x) { return pad + (x - xmin) / spanx * (size - 2 * pad); };
  auto py = [&](double y) { return size - pad - (y - ymin) / spany * (size - 2 * pad); };
  static constexpr const char* kColor[2] = {"#d62728", "#1f77b4"};

  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"640\" viewBox=\"0 0 600 640\">\n";
  svg += "<rect width=\"600\" height=\"640\" fill=\"white\"/>\n";
  for (const auto& pt : synth_points) {
    svg += "<circle cx=\"" + fmt(px(pt.x), "%.2f") + "\" cy=\"" + fmt(py(pt.y), "%.2f") +
           "\" r=\"3\" fill=\"" + kColor[pt.label] + "\" fill-opacity=\"0.5\"/>\n";
  }
  for (int c = 0; c < 2; ++c) {
    const double cx = px(sx[c]), cy = py(sy[c]);
    svg += "<path d=\"M" + fmt(cx - 9, "%.2f") + " " + fmt(cy - 9, "%.2f") + " L" + fmt(cx + 9, "%.2f") + " " +
           fmt(cy + 9, "%.2f") + " M" + fmt(cx - 9, "%.2f") + " " + fmt(cy + 9, "%.2f") + " L" +
           fmt(cx + 9, "%.2f") + " " + fmt(cy - 9, "%.2f") + "\" stroke=\"black\" stroke-width=\"5\"/>\n";
    svg += "<path d=\"M" + fmt(cx - 8, "%.2f") + " " + fmt(cy - 8, "%.2f") + " L" + fmt(cx + 8, "%.2f") + " " +
           fmt(cy + 8, "%.2f") + " M" + fmt(cx - 8, "%.2f") + " " + fmt(cy + 8, "%.2f") + " L" +
           fmt(cx + 8, "%.2f") + " " + fmt(cy - 8, "%.2f") + "\" stroke=\"" + kColor[c] + "\" stroke-width=\"3\"/>\n";
  }
  svg += "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<circle cx=\"20\" cy=\"615\" r=\"4\" fill=\"#1f77b4\"/><text x=\"30\" y=\"619\">synthetic favor</text>\n";
  svg += "<circle cx=\"140\" cy=\"615\" r=\"4\" fill=\"#d62728\"/><text x=\"150\" y=\"619\">synthetic against</text>\n";
  svg += "<text x=\"280\" y=\"619\" fill=\"#1f77b4\">&#x2716;</text><text x=\"295\" y=\"619\">real favor mean</text>\n";
  svg += "<text x=\"410\" y=\"619\" fill=\"#d62728\">&#x2716;</text><text x=\"425\" y=\"619\">real against mean</text>\n";
  svg += "</g>\n</svg>\n";
  return svg;
}

}  // namespace stanceforge
