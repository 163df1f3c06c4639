#include "stanceforge/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <tuple>

#include "json.hpp"
#include "stanceforge/error.hpp"

namespace stanceforge {

using ordered_json = nlohmann::ordered_json;

double f1_score(const std::vector<StanceLabel>& predictions, const std::vector<StanceLabel>& labels,
                std::vector<std::string>* warnings) {
  if (predictions.size() != labels.size())
    throw ValidationError("f1: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  if (labels.empty()) throw ValidationError("f1: empty input");
  double total = 0.0;
  for (int c = 0; c < 2; ++c) {
    const auto cls = static_cast<StanceLabel>(c);
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool pred = predictions[i] == cls, gold = labels[i] == cls;
      tp += pred && gold;
      fp += pred && !gold;
      fn += !pred && gold;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    if (denom == 0) {
      if (warnings)
        warnings->push_back("class " + std::to_string(c) + " absent from predictions and labels; its F1 counts as 0");
      continue;
    }
    total += 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return total / 2.0;
}

const std::vector<MethodSpec>& method_registry() {
  static const std::vector<MethodSpec> kMethods = {
      {"Baseline", std::nullopt, false, false},
      {"Baseline+Synth", std::nullopt, false, true},
      {"True Labels", std::nullopt, true, false},
      {"True Labels+Synth", std::nullopt, true, true},
      {"SQBC", Strategy::Sqbc, false, false},
      {"SQBC+Synth", Strategy::Sqbc, false, true},
      {"CAL", Strategy::Cal, false, false},
      {"CAL+Synth", Strategy::Cal, false, true},
      {"Random", Strategy::Random, false, false},
      {"Random+Synth", Strategy::Random, false, true},
  };
  return kMethods;
}

const MethodSpec& find_method(std::string_view name) {
  for (const auto& m : method_registry())
    if (m.name == name) return m;
  std::string known;
  for (const auto& m : method_registry()) known += (known.empty() ? "" : ", ") + m.name;
  throw ValidationError("unknown method \"" + std::string(name) + "\" (known: " + known + ")");
}

namespace {

std::size_t method_rank(const std::string& name) {
  const auto& reg = method_registry();
  for (std::size_t i = 0; i < reg.size(); ++i)
    if (reg[i].name == name) return i;
  return reg.size();
}

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string percent(double budget) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g%%", budget * 100.0);
  return buf;
}

std::string pad(const std::string& s, std::size_t width, bool right = true) {
  if (s.size() >= width) return s;
  return right ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string format_record(const EvalRecord& r) {
  ordered_json j;
  j["question_id"] = r.question_id;
  j["seed"] = r.seed;
  j["method"] = r.method;
  j["m"] = r.m;
  j["budget"] = r.budget;
  j["f1"] = r.f1 ? ordered_json(*r.f1) : ordered_json(nullptr);
  j["status"] = r.ok() ? "ok" : "failed";
  if (!r.ok()) j["error"] = r.error;
  return j.dump();
}

EvalRecord parse_record(std::string_view line) {
  const auto j = ordered_json::parse(line);
  EvalRecord r;
  r.question_id = j.at("question_id").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.method = j.at("method").get<std::string>();
  find_method(r.method);
  r.m = j.at("m").get<std::size_t>();
  r.budget = j.at("budget").get<double>();
  if (j.contains("f1") && !j["f1"].is_null()) {
    const double f1 = j["f1"].get<double>();
    if (!(f1 >= 0.0 && f1 <= 1.0)) throw ValidationError("f1 outside [0,1]");
    r.f1 = f1;
  }
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  return r;
}

std::vector<EvalRecord> parse_records(std::string_view jsonl, const std::string& source) {
  std::vector<EvalRecord> out;
  std::size_t line_no = 0, start = 0;
  while (start < jsonl.size()) {
    auto end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    auto line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<EvalRecord> load_records(const std::filesystem::path& path) {
  return parse_records(read_file(path), path.string());
}

std::string format_records(const std::vector<EvalRecord>& records) {
  std::string out;
  for (const auto& r : records) out += format_record(r) + "\n";
  return out;
}

bool ResultTable::complete() const {
  return std::all_of(rows.begin(), rows.end(), [](const ResultRow& r) { return r.complete; });
}

ResultTable aggregate(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ValidationError("aggregate: no records");

  using CellKey = std::tuple<std::string, std::uint64_t, std::string, std::size_t, double>;
  std::set<CellKey> seen;
  std::set<std::string> questions;
  std::set<std::uint64_t> seeds;
  using RowKey = std::tuple<std::size_t, std::string, std::size_t, double>;
  // row -> question -> f1 per seed
  std::map<RowKey, std::map<std::string, std::vector<double>>> groups;
  std::map<RowKey, std::size_t> ok_cells;

  for (const auto& r : records) {
    if (!seen.emplace(r.question_id, r.seed, r.method, r.m, r.budget).second)
      throw ValidationError("duplicate record for question \"" + r.question_id + "\", seed " + std::to_string(r.seed) +
                            ", method \"" + r.method + "\", M=" + std::to_string(r.m) + ", budget " +
                            percent(r.budget));
    questions.insert(r.question_id);
    seeds.insert(r.seed);
    RowKey key{method_rank(r.method), r.method, r.m, r.budget};
    auto& g = groups[key];
    if (r.ok()) {
      g[r.question_id].push_back(*r.f1);
      ++ok_cells[key];
    }
  }

  ResultTable table;
  table.questions = questions.size();
  table.seeds = seeds.size();
  const std::size_t expected = questions.size() * seeds.size();
  for (const auto& [key, per_question] : groups) {
    ResultRow row;
    row.method = std::get<1>(key);
    row.m = std::get<2>(key);
    row.budget = std::get<3>(key);
    row.expected_cells = expected;
    row.n_cells = ok_cells[key];
    row.complete = row.n_cells == expected;
    double mean_sum = 0.0, std_sum = 0.0;
    for (const auto& [_, f1s] : per_question) {
      double mean = 0.0;
      for (double f : f1s) mean += f;
      mean /= static_cast<double>(f1s.size());
      double var = 0.0;
      if (f1s.size() > 1) {
        for (double f : f1s) var += (f - mean) * (f - mean);
        var /= static_cast<double>(f1s.size() - 1);
      }
      mean_sum += mean;
      std_sum += std::sqrt(var);
    }
    if (!per_question.empty()) {
      row.mean_f1 = mean_sum / static_cast<double>(per_question.size());
      row.std_f1 = std_sum / static_cast<double>(per_question.size());
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string render_table_csv(const ResultTable& table) {
  std::string out = "method,m,budget,mean_f1,std_f1,n_cells,expected_cells,complete\n";
  for (const auto& r : table.rows) {
    char budget[32];
    std::snprintf(budget, sizeof budget, "%g", r.budget);
    out += r.method + "," + std::to_string(r.m) + "," + budget + "," + fixed(r.mean_f1, 6) + "," + fixed(r.std_f1, 6) +
           "," + std::to_string(r.n_cells) + "," + std::to_string(r.expected_cells) + "," +
           (r.complete ? "true" : "false") + "\n";
  }
  return out;
}

std::string render_table_text(const ResultTable& table) {
  // Cells print "mean (std)"; '*' marks incomplete cells, '-' absent ones.
  auto cell = [](const ResultRow* r) {
    if (!r) return std::string("-");
    if (r->n_cells == 0) return std::string("failed");
    return fixed(r->mean_f1) + " (" + fixed(r->std_f1) + ")" + (r->complete ? "" : "*");
  };
  constexpr std::size_t kCol = 16;

  std::vector<std::string> methods;
  std::set<std::size_t> ms;
  std::set<double> budgets;
  std::map<std::tuple<std::string, std::size_t, double>, const ResultRow*> index;
  std::size_t name_width = 6;
  for (const auto& r : table.rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    if (r.budget > 0.0) {
      ms.insert(r.m);
      budgets.insert(r.budget);
    }
    index[{r.method, r.m, r.budget}] = &r;
    name_width = std::max(name_width, r.method.size());
  }
  name_width += 2;

  std::string out;
  out += "Mean F1 over " + std::to_string(table.questions) + " question(s) x " + std::to_string(table.seeds) +
         " seed(s); parentheses hold the per-question std over seeds averaged over questions\n";

  if (!ms.empty()) {
    out += "\nFine-tuning with most informative samples\n";
    std::string header = pad("", name_width, false), sub = pad("", name_width, false);
    for (auto m : ms) {
      const std::string label = "M=" + std::to_string(m);
      const std::size_t width = kCol * budgets.size();
      const std::size_t left = (width - std::min(width, label.size())) / 2;
      header += "|" + pad(pad(label, label.size() + left, true), width, false);
      sub += "|";
      for (auto b : budgets) sub += pad(percent(b), kCol);
    }
    out += header + "\n" + sub + "\n";
    for (const auto& method : methods) {
      if (!find_method(method).selection) continue;
      std::string line = pad(method, name_width, false);
      for (auto m : ms) {
        line += "|";
        for (auto b : budgets) {
          auto it = index.find({method, m, b});
          line += pad(cell(it == index.end() ? nullptr : it->second), kCol);
        }
      }
      out += line + "\n";
    }
  }

  std::set<std::size_t> plain_ms;
  for (const auto& r : table.rows)
    if (r.budget == 0.0) plain_ms.insert(r.m);
  if (!plain_ms.empty()) {
    out += "\nFine-tuning without selection\n";
    std::string header = pad("", name_width, false);
    for (auto m : plain_ms) header += "|" + pad(m == 0 ? "no synth" : "M=" + std::to_string(m), kCol);
    out += header + "\n";
    for (const auto& method : methods) {
      if (find_method(method).selection) continue;
      std::string line = pad(method, name_width, false);
      for (auto m : plain_ms) {
        auto it = index.find({method, m, 0.0});
        line += "|" + pad(cell(it == index.end() ? nullptr : it->second), kCol);
      }
      out += line + "\n";
    }
  }
  if (!table.complete()) out += "\n* incomplete: fewer successful cells than questions x seeds\n";
  return out;
}

}  // namespace stanceforge
