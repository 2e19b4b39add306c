#include "opgran/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <thread>

#include "httplib.h"

#include "opgran/errors.hpp"
#include "opgran/rng.hpp"

namespace opgran {

namespace {

struct KindName {
  TemplateKind kind;
  const char* name;
};

constexpr KindName kKinds[] = {
    {TemplateKind::baseline, "baseline"},
    {TemplateKind::two_stage, "two_stage"},
    {TemplateKind::two_stage_cot, "two_stage_cot"},
    {TemplateKind::specificity_low, "specificity_low"},
    {TemplateKind::specificity_medium, "specificity_medium"},
    {TemplateKind::specificity_high, "specificity_high"},
    {TemplateKind::specificity_linear, "specificity_linear"},
    {TemplateKind::specificity_logistic, "specificity_logistic"},
    {TemplateKind::score_range, "score_range"},
    {TemplateKind::not_step5, "not_step5"},
    {TemplateKind::two_decimals, "two_decimals"},
    {TemplateKind::coarse_fine, "coarse_fine"},
    {TemplateKind::in_context, "in_context"},
    {TemplateKind::multiple_predictions, "multiple_predictions"},
};

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

}  // namespace

std::string to_string(TemplateKind kind) {
  for (const auto& k : kKinds) {
    if (k.kind == kind) return k.name;
  }
  return "baseline";
}

PromptTemplate parse_template(std::string_view name, std::string context, std::vector<std::string> class_labels) {
  if (class_labels.size() < 2) throw ConfigError("at least two class labels required");
  PromptTemplate tpl;
  tpl.context = std::move(context);
  tpl.class_labels = std::move(class_labels);
  std::string n = lower(name);
  std::replace(n.begin(), n.end(), '-', '_');
  if (n.rfind("score_range", 0) == 0) {
    tpl.kind = TemplateKind::score_range;
    const auto open = n.find('(');
    if (open != std::string::npos) {
      const auto close = n.find(')', open);
      if (close == std::string::npos) throw ConfigError("bad template: " + std::string(name));
      const auto arg = n.substr(open + 1, close - open - 1);
      double x = 0.0;
      const auto [p, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), x);
      if (ec != std::errc{} || p != arg.data() + arg.size() || !(x > 0.0)) {
        throw ConfigError("bad score_range argument: " + arg);
      }
      tpl.range_max = x;
    }
    return tpl;
  }
  for (const auto& k : kKinds) {
    if (n == k.name) {
      tpl.kind = k.kind;
      return tpl;
    }
  }
  throw ConfigError("unknown template: " + std::string(name));
}

// --- rendering -----------------------------------------------------------

namespace {

constexpr const char* kHeader =
    "<task>\n"
    "    {context}\n"
    "</task>\n"
    "\n"
    "<input_sentence>\n"
    "    {input}\n"
    "</input_sentence>\n"
    "\n"
    "<formatting instructions>\n"
    "    - Provide your final answer **only** in the specified JSON format below.\n"
    "    - Do **not** include any explanations or additional text outside the JSON.\n"
    "    - Ensure the JSON is valid and properly formatted.\n"
    "    - Do **not** include any extra characters or text before or after the JSON.\n"
    "</formatting instructions>\n"
    "\n";

constexpr const char* kExtractStep =
    "1. Your task is to estimate the class probabilities given input. In order to do this, determine the input "
    "features that will contribute to your decision and extract their values. You have to ALWAYS assign a continuous "
    "numerical value from [0-1] with high precision (can have many decimal points) to each feature you picked, and "
    "work with these values in the next steps to represent the features.\n";

constexpr const char* kFeaturesTag =
    "    <selected-features>List the names and values of the features you selected to generate your output "
    "with.</selected-features>\n";

constexpr const char* kWeightsCalcTags =
    "    <weights>List the weights you assigned to each input feature to parameterize the logistic regression "
    "function.</weights>\n"
    "    <calculation>Break down the calculation of your outputs using selected feature values, hypothesis functions "
    "and weights.</calculation>\n";

constexpr const char* kTail =
    "    <reason>Explain your reasoning.</reason>\n"
    "    <decision>Return the most probable category for the input.</decision>\n"
    "    <decision-confidence>Provide the probability of your decision being correct in the range of 0 to "
    "1.</decision-confidence>\n"
    "</expected-output>\n";

std::string task_instructions(TemplateKind kind) {
  std::string body;
  switch (kind) {
    case TemplateKind::specificity_low:
      body =
          "1. Your task is to estimate the class probabilities given input. In order to do this, determine the input "
          "features that will contribute to your decision.\n"
          "2. Then, based on your understanding of the task and the input features you selected, pick a function "
          "(hypothesis) that takes these input features in, and outputs a continuous decision estimate.\n"
          "3. Using your input features, hypothesis and its weights, calculate the classification score as your "
          "output.\n";
      break;
    case TemplateKind::specificity_medium:
      body = std::string(kExtractStep) +
             "2. Then, based on your understanding of the task and the input features you selected, pick a function "
             "(hypothesis) that takes these input features in, and outputs a continuous decision estimate.\n"
             "3. Using your input features and the hypothesis function and calculate the classification score as "
             "your output.\n";
      break;
    case TemplateKind::specificity_high:
      body = std::string(kExtractStep) +
             "2. Then, based on your understanding of the task and the input features you selected, pick a function "
             "(hypothesis) parameterized by weights for each input feature, and that takes these input features in, "
             "and outputs a continuous decision estimate.\n"
             "3. Assign continuous weights to your hypothesis function considering the desired impact of each input "
             "feature to the decision.\n"
             "4. Next, having chosen the input features and weights of your prediction fuction, calculate your "
             "continuous decision estimates (i.e., probability of classes) as your output by running input features "
             "through the function you picked.\n";
      break;
    case TemplateKind::specificity_linear:
      body = std::string(kExtractStep) +
             "2. Then, based on your understanding of the task and the input features you selected, use a linear "
             "weighted combination that combines the input features (hypothesis function), and outputs a continuous "
             "decision estimate.\n"
             "3. Assign continuous weights to your hypothesis function considering the desired impact of each input "
             "feature to the decision.\n"
             "4. Next, having chosen the input features and weights of your prediction fuction, calculate your "
             "continuous decision estimates (i.e., probability of classes) as your output by running input features "
             "through the function you picked. If your output is not in [0, 1], you are allowed to round to the "
             "closest value inside this range.\n";
      break;
    case TemplateKind::specificity_logistic:
      body = std::string(kExtractStep) +
             "2. Then, based on your understanding of the task and the input features you selected, use a linear "
             "weighted combination that combines the input features (hypothesis function) followed by a logistic "
             "sigmoid function (1/(1+e^(-x))) to output a continuous decision estimate.\n"
             "3. Assign continuous weights to your hypothesis function considering the desired impact of each input "
             "feature to the decision.\n"
             "4. Next, having chosen the input features and weights of your prediction fuction, calculate your "
             "continuous decision estimates (i.e., probability of classes) as your output by running input features "
             "through the function you picked.\n";
      break;
    default:
      return {};
  }
  return "While generating your output, follow the instructions provided below:\n<task_instructions>\n" + body +
         "</task_instructions>\n\n";
}

std::string pre_tags(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::specificity_low:
      return std::string(kFeaturesTag) +
             "    <hypothesis-function>Describe the function you picked for decision making.</hypothesis-function>\n";
    case TemplateKind::specificity_medium:
      return std::string(kFeaturesTag) + "    <hypothesis-function>Describe the function you picked.</hypothesis-function>\n";
    case TemplateKind::specificity_high:
    case TemplateKind::specificity_linear:
    case TemplateKind::specificity_logistic:
      return std::string(kFeaturesTag) +
             "    <hypothesis-function>Describe the function you picked.</hypothesis-function>\n" + kWeightsCalcTags;
    default:
      return {};
  }
}

std::string variant_note(TemplateKind kind) {
  switch (kind) {
    case TemplateKind::not_step5:
      return "    For the probabilities, do not just default to multiples of 0.05. Over a dataset, the values must have "
             "enough spread while being comparable across samples to provide an operating point for any desired "
             "precision or recall.\n";
    case TemplateKind::two_decimals:
      return "    Predict the probabilities with two decimal places.\n";
    case TemplateKind::coarse_fine:
      return "    Obtain the probability values as a coarse-grained and a fine-grained value. The fine-grained value "
             "must be within 0.03 of the coarse-grained prediction. Over a dataset, the fine-grained values must have "
             "enough spread while being comparable across samples to provide an operating point for any desired "
             "precision or recall.\n";
    case TemplateKind::in_context:
      return "    Over a dataset, the probability values must have enough spread while being comparable across samples "
             "to provide an operating point for any desired precision or recall. Here is an example of predicted "
             "probabilities for a class over 25 samples in sorted order: [0.01, 0.03, 0.05, 0.08, 0.1, 0.12, 0.19, "
             "0.25, 0.28, 0.32, 0.4, 0.46, 0.53, 0.6, 0.66, 0.71, 0.75, 0.77, 0.81, 0.84, 0.88, 0.9, 0.92, 0.95, "
             "0.96, 0.99].\n";
    case TemplateKind::multiple_predictions:
      return "    Current probability value prediction must not be dependent on the previous predicted values.\n";
    default:
      return {};
  }
}

std::string header(const PromptTemplate& tpl, std::string_view instance_text) {
  std::string h = kHeader;
  // Substitute input last so braces inside the instance text are left alone.
  replace_all(h, "{context}", tpl.context);
  const auto pos = h.find("{input}");
  h.replace(pos, 7, instance_text);
  return h;
}

std::string class_list(const PromptTemplate& tpl) {
  std::string s;
  for (std::size_t i = 0; i < tpl.class_labels.size(); ++i) {
    s += (i ? ", '" : "'") + tpl.class_labels[i] + "'";
  }
  return s;
}

}  // namespace

std::string category_probabilities(const PromptTemplate& tpl) {
  std::string out;
  for (const auto& v : tpl.class_labels) {
    switch (tpl.kind) {
      case TemplateKind::score_range: {
        const auto x = format_number(tpl.range_max);
        out += "<" + v + "-score> Return the likelihood of input belonging to the category '" + v + "', from 0 to " +
               x + ", " + x + " corresponding to the strongest chance of belonging. </" + v + "-score>\n";
        break;
      }
      case TemplateKind::coarse_fine:
        out += "<" + v + "-score-coarse>\n <" + v + "-score>  Return the probability of input belonging to the category '" +
               v + "', from 0 to 1, 1 corresponding to the strongest chance of belonging. </" + v + "-score>\n";
        break;
      case TemplateKind::multiple_predictions:
        out += "<" + v + "-score> Return a list of 20 independent predictions of probability of input belonging to the category '" +
               v + "', from 0 to 1, 1 corresponding to the strongest chance of belonging.</" + v + "-score>\n";
        break;
      default:
        out += "<" + v + "-score> Return the probability of input belonging to the category '" + v +
               "', from 0 to 1, 1 corresponding to the strongest chance of belonging. </" + v + "-score>\n";
    }
  }
  return out;
}

std::string render_prompt(const PromptTemplate& tpl, std::string_view instance_text) {
  std::string p = header(tpl, instance_text);
  if (tpl.kind == TemplateKind::two_stage || tpl.kind == TemplateKind::two_stage_cot) {
    p += "Your output should look like this but in JSON format:\n<expected-output>\n";
    if (tpl.kind == TemplateKind::two_stage_cot) {
      p += "    <reason>Think step by step about the input before choosing a category.</reason>\n";
    }
    p += "    <decision>Return the most probable category for the input. The acceptable categories are " +
         class_list(tpl) + ".</decision>\n</expected-output>\n";
    return p;
  }
  p += task_instructions(tpl.kind);
  p += "Your output should look like this but in JSON format:\n<expected-output>\n";
  p += pre_tags(tpl.kind);
  p += "    " + category_probabilities(tpl);
  p += variant_note(tpl.kind);
  p += kTail;
  return p;
}

std::string render_confidence_prompt(const PromptTemplate& tpl, std::string_view instance_text,
                                     std::string_view decision) {
  std::string p = header(tpl, instance_text);
  p += "<proposed-answer>\n    ";
  p += decision;
  p += "\n</proposed-answer>\n\nYour output should look like this but in JSON format:\n<expected-output>\n";
  if (tpl.kind == TemplateKind::two_stage_cot) {
    p += "    <reason>Think step by step about whether the proposed answer is correct.</reason>\n";
  }
  p += "    <decision-confidence>Provide the probability that the proposed answer is correct in the range of 0 to "
       "1.</decision-confidence>\n</expected-output>\n";
  return p;
}

// --- parsing -------------------------------------------------------------

namespace detail {

std::vector<std::pair<double, std::string>> scan_numbers(std::string_view text) {
  std::vector<std::pair<double, std::string>> out;
  auto digit = [&](std::size_t i) { return i < text.size() && text[i] >= '0' && text[i] <= '9'; };
  std::size_t i = 0;
  while (i < text.size()) {
    const bool starts = digit(i) || (text[i] == '.' && digit(i + 1));
    const bool prev_word = i > 0 && (std::isalnum(static_cast<unsigned char>(text[i - 1])) || text[i - 1] == '.');
    if (!starts || prev_word) {
      ++i;
      continue;
    }
    std::size_t start = i;
    if (start > 0 && text[start - 1] == '-' && (start < 2 || !std::isalnum(static_cast<unsigned char>(text[start - 2])))) {
      --start;
    }
    while (digit(i)) ++i;
    if (i < text.size() && text[i] == '.' && digit(i + 1)) {
      ++i;
      while (digit(i)) ++i;
    }
    if (i < text.size() && (text[i] == 'e' || text[i] == 'E')) {
      std::size_t j = i + 1;
      if (j < text.size() && (text[j] == '+' || text[j] == '-')) ++j;
      if (digit(j)) {
        i = j;
        while (digit(i)) ++i;
      }
    }
    const std::string_view lit = text.substr(start, i - start);
    double v = 0.0;
    const auto [p, ec] = std::from_chars(lit.data(), lit.data() + lit.size(), v);
    if (ec == std::errc{} && p == lit.data() + lit.size() && std::isfinite(v)) out.emplace_back(v, std::string(lit));
  }
  return out;
}

nlohmann::json chat_body(const GatewayConfig& config, const std::string& prompt) {
  return {{"model", config.model_name},
          {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
          {"temperature", config.temperature}};
}

std::optional<std::string> extract_content(std::string_view body) {
  const auto j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  const auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) return std::nullopt;
  const auto& first = (*choices)[0];
  if (!first.is_object()) return std::nullopt;
  if (const auto msg = first.find("message"); msg != first.end() && msg->is_object()) {
    if (const auto c = msg->find("content"); c != msg->end() && c->is_string()) return c->get<std::string>();
  }
  if (const auto t = first.find("text"); t != first.end() && t->is_string()) return t->get<std::string>();
  return std::nullopt;
}

}  // namespace detail

namespace {

// Replace bytes that are not valid UTF-8 so the text can be stored in JSON.
std::string sanitize_utf8(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 0;
    bool ok = len > 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) ok = (static_cast<unsigned char>(s[i + k]) >> 6) == 0x2;
    if (ok && len == 2 && c < 0xc2) ok = false;
    if (ok) {
      out.append(s.substr(i, len));
      i += len;
    } else {
      out += '?';
      ++i;
    }
  }
  return out;
}

std::string canonical_key(std::string_view k) {
  std::string s = lower(k);
  std::replace(s.begin(), s.end(), '_', '-');
  return s;
}

const nlohmann::json* find_key(const nlohmann::json& j, const std::string& key, int depth = 0) {
  if (depth > 16) return nullptr;
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (canonical_key(it.key()) == key) return &it.value();
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (auto found = find_key(it.value(), key, depth + 1)) return found;
    }
  } else if (j.is_array()) {
    for (const auto& v : j) {
      if (auto found = find_key(v, key, depth + 1)) return found;
    }
  }
  return nullptr;
}

std::optional<std::string> tag_content(std::string_view text, const std::string& lowered, const std::string& tag) {
  const std::string open = "<" + tag + ">";
  const auto a = lowered.find(open);
  if (a == std::string::npos) return std::nullopt;
  const auto start = a + open.size();
  auto b = lowered.find("</" + tag + ">", start);
  if (b == std::string::npos) b = lowered.find('<', start);
  if (b == std::string::npos) b = lowered.size();
  return std::string(text.substr(start, b - start));
}

std::vector<std::pair<double, std::string>> numbers_in(const nlohmann::json& v) {
  if (v.is_number()) return {{v.get<double>(), v.dump()}};
  if (v.is_string()) return detail::scan_numbers(v.get_ref<const std::string&>());
  std::vector<std::pair<double, std::string>> out;
  if (v.is_array() || v.is_object()) {
    for (const auto& e : v) {
      auto sub = numbers_in(e);
      out.insert(out.end(), sub.begin(), sub.end());
    }
  }
  return out;
}

struct Field {
  std::optional<nlohmann::json> json_value;
  std::optional<std::string> tag_value;
  bool present() const { return json_value || tag_value; }
  std::vector<std::pair<double, std::string>> numbers() const {
    if (json_value) return numbers_in(*json_value);
    if (tag_value) return detail::scan_numbers(*tag_value);
    return {};
  }
  std::optional<std::string> text() const {
    if (json_value) {
      if (json_value->is_string()) return json_value->get<std::string>();
      return json_value->dump();
    }
    return tag_value;
  }
};

Field lookup(const nlohmann::json* doc, std::string_view text, const std::string& lowered, const std::string& key) {
  Field f;
  if (doc) {
    if (const auto* v = find_key(*doc, key); v && !v->is_null()) {
      f.json_value = *v;
      return f;
    }
  }
  f.tag_value = tag_content(text, lowered, key);
  return f;
}

double reduce(std::vector<double> values, const ParseOptions& opt) {
  switch (opt.reducer) {
    case ListReducer::mean: {
      std::sort(values.begin(), values.end());
      double s = 0.0;
      for (double v : values) s += v;
      return s / static_cast<double>(values.size());
    }
    case ListReducer::median: {
      std::sort(values.begin(), values.end());
      const auto n = values.size();
      return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    }
    case ListReducer::random:
    default: {
      Stream rng(opt.seed, opt.key, StreamDomain::gateway);
      return values[rng.below(values.size())];
    }
  }
}

void add_flag(PredictionRecord& rec, const std::string& flag) {
  if (std::find(rec.flags.begin(), rec.flags.end(), flag) == rec.flags.end()) rec.flags.push_back(flag);
}

// Score of one class, normalized to [0, 1]; text is the literal as written.
std::optional<std::pair<double, std::string>> class_score(const Field& f, const PromptTemplate& tpl,
                                                          const ParseOptions& opt, PredictionRecord& rec) {
  if (!f.present()) return std::nullopt;
  auto nums = f.numbers();
  if (nums.empty()) return std::nullopt;
  const double scale = tpl.kind == TemplateKind::score_range ? tpl.range_max : 1.0;
  std::vector<double> values;
  std::string literal;
  if (tpl.kind == TemplateKind::multiple_predictions) {
    for (const auto& [v, lit] : nums) {
      if (v / scale >= 0.0 && v / scale <= 1.0) values.push_back(v / scale);
    }
    if (values.size() < nums.size()) add_flag(rec, "score_out_of_range");
    if (values.empty()) return std::nullopt;
    return std::pair{reduce(values, opt), std::string{}};
  }
  const double v = nums.front().first / scale;
  if (!(v >= 0.0 && v <= 1.0)) {
    add_flag(rec, "score_out_of_range");
    return std::nullopt;
  }
  return std::pair{v, nums.front().second};
}

PredictionRecord parse_impl(std::string_view text, const PromptTemplate& tpl, const ParseOptions& opt) {
  PredictionRecord rec;
  rec.raw = sanitize_utf8(text);
  const std::string lowered = lower(text);

  nlohmann::json doc = nlohmann::json::parse(text, nullptr, false);
  if (doc.is_discarded() || !doc.is_structured()) {
    const auto a = text.find('{');
    const auto b = text.rfind('}');
    doc = nlohmann::json();
    if (a != std::string_view::npos && b != std::string_view::npos && b > a) {
      doc = nlohmann::json::parse(text.substr(a, b - a + 1), nullptr, false);
      if (doc.is_discarded()) doc = nlohmann::json();
    }
  }
  const nlohmann::json* docp = doc.is_structured() ? &doc : nullptr;

  if (!tpl.class_labels.empty()) {
    const auto pos_key = canonical_key(tpl.class_labels[0] + "-score");
    if (auto s = class_score(lookup(docp, text, lowered, pos_key), tpl, opt, rec)) {
      rec.score_pos = s->first;
      if (!s->second.empty()) rec.score_pos_text = s->second;
    }
    if (tpl.class_labels.size() > 1) {
      const auto neg_key = canonical_key(tpl.class_labels[1] + "-score");
      ParseOptions neg_opt = opt;
      neg_opt.key = splitmix64(opt.key);
      if (auto s = class_score(lookup(docp, text, lowered, neg_key), tpl, neg_opt, rec)) rec.score_neg = s->first;
    }
  }

  const Field decision = lookup(docp, text, lowered, "decision");
  if (auto d = decision.text()) {
    const auto trimmed = sanitize_utf8(d->substr(0, 256));
    const auto b = trimmed.find_first_not_of(" \t\r\n\"'");
    const auto e = trimmed.find_last_not_of(" \t\r\n\"'");
    if (b != std::string::npos) rec.decision = trimmed.substr(b, e - b + 1);
  }
  const auto conf = lookup(docp, text, lowered, "decision-confidence").numbers();
  if (!conf.empty()) {
    if (conf.front().first >= 0.0 && conf.front().first <= 1.0) {
      rec.decision_confidence = conf.front().first;
    } else {
      add_flag(rec, "confidence_out_of_range");
    }
  }
  if (!rec.score_pos && tpl.kind != TemplateKind::two_stage && tpl.kind != TemplateKind::two_stage_cot) {
    add_flag(rec, "unparseable");
  }
  return rec;
}

}  // namespace

PredictionRecord parse_response(std::string_view text, const PromptTemplate& tpl, const ParseOptions& options) {
  try {
    return parse_impl(text, tpl, options);
  } catch (...) {
    PredictionRecord rec;
    try {
      rec.raw = sanitize_utf8(text);
    } catch (...) {
    }
    rec.flags.push_back("unparseable");
    return rec;
  }
}

// --- transport -----------------------------------------------------------

std::vector<Instance> load_instances(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<Instance> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j.contains("text") || !j["text"].is_string()) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": expected {\"id\", \"text\", ...}");
    }
    Instance inst;
    inst.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
    inst.text = j["text"].get<std::string>();
    if (j.contains("label") && !j["label"].is_null()) {
      const auto& l = j["label"];
      const int v = l.is_string() ? std::atoi(l.get<std::string>().c_str()) : l.get<int>();
      if (v != 0 && v != 1) throw DataError(path.string() + ":" + std::to_string(n) + ": label must be 0 or 1");
      inst.label = v;
    }
    if (j.contains("dataset_id") && j["dataset_id"].is_string()) inst.dataset_id = j["dataset_id"].get<std::string>();
    out.push_back(std::move(inst));
  }
  return out;
}

namespace {

struct Endpoint {
  std::string base;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ConfigError("endpoint must start with http:// or https://");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

struct Counters {
  std::atomic<std::size_t> requests{0};
  std::atomic<std::size_t> retries{0};
  std::atomic<std::size_t> failed{0};
  std::atomic<std::size_t> in_flight{0};
  std::atomic<std::size_t> max_in_flight{0};
};

class Transport {
 public:
  Transport(const GatewayConfig& cfg, Counters& counters)
      : cfg_(cfg), counters_(counters), endpoint_(split_url(cfg.endpoint_url)) {
    if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key) {
      headers_.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  // One logical request with retries. nullopt when every attempt failed.
  std::optional<std::string> send(const std::string& prompt, httplib::Client& client) {
    const std::string body = detail::chat_body(cfg_, prompt).dump();
    const int attempts = std::max(1, cfg_.retry.max_attempts);
    for (int a = 1; a <= attempts; ++a) {
      if (a > 1) {
        counters_.retries++;
        const double wait = cfg_.retry.base_backoff_s * std::pow(2.0, a - 2);
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      }
      counters_.requests++;
      const auto now = ++counters_.in_flight;
      auto seen = counters_.max_in_flight.load();
      while (now > seen && !counters_.max_in_flight.compare_exchange_weak(seen, now)) {
      }
      auto res = client.Post(endpoint_.path, headers_, body, "application/json");
      --counters_.in_flight;
      if (res && res->status == 200) {
        if (auto content = detail::extract_content(res->body)) return content;
        break;  // well-formed HTTP but unusable body; retrying will not help
      }
      const bool transient = !res || res->status == 429 || res->status >= 500;
      if (!transient) break;
    }
    counters_.failed++;
    return std::nullopt;
  }

  std::unique_ptr<httplib::Client> client() const {
    auto c = std::make_unique<httplib::Client>(endpoint_.base);
    const auto secs = static_cast<time_t>(cfg_.timeout_s);
    const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
    c->set_connection_timeout(secs, usecs);
    c->set_read_timeout(secs, usecs);
    c->set_write_timeout(secs, usecs);
    return c;
  }

 private:
  const GatewayConfig& cfg_;
  Counters& counters_;
  Endpoint endpoint_;
  httplib::Headers headers_;
};

// Runs job(i, client) for i in [0, n) on at most max_in_flight workers, each
// issuing one request at a time.
template <typename Job>
void run_pool(std::size_t n, const GatewayConfig& cfg, const Transport& transport, Job job) {
  const std::size_t workers = std::min(cfg.max_in_flight, std::max<std::size_t>(n, 1));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      auto client = transport.client();
      for (std::size_t i = next++; i < n; i = next++) job(i, *client);
    });
  }
  for (auto& t : threads) t.join();
}

void validate(const GatewayConfig& cfg) {
  if (cfg.n_samples < 1) throw ConfigError("n_samples must be >= 1");
  if (cfg.max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  if (cfg.retry.max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (!(cfg.temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  split_url(cfg.endpoint_url);
}

PredictionRecord base_record(const Instance& inst) {
  PredictionRecord rec;
  rec.id = inst.id;
  rec.dataset_id = inst.dataset_id;
  rec.label = inst.label;
  return rec;
}

GatewayStats finish(std::vector<PredictionRecord>& records, const Counters& c) {
  GatewayStats s;
  s.requests = c.requests;
  s.retries = c.retries;
  s.failed_requests = c.failed;
  s.max_in_flight_observed = c.max_in_flight;
  for (const auto& r : records) s.flagged_records += r.flagged() ? 1 : 0;
  return s;
}

}  // namespace

GatewayResult classify(std::span<const Instance> instances, const PromptTemplate& tpl, const GatewayConfig& config) {
  validate(config);
  const bool sampling = config.temperature > 0.0;
  const std::size_t per = sampling ? config.n_samples : 1;
  Counters counters;
  Transport transport(config, counters);
  std::vector<std::optional<std::string>> responses(instances.size() * per);

  run_pool(responses.size(), config, transport, [&](std::size_t j, httplib::Client& client) {
    responses[j] = transport.send(render_prompt(tpl, instances[j / per].text), client);
  });

  GatewayResult result;
  std::size_t succeeded = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    PredictionRecord rec = base_record(instances[i]);
    const std::uint64_t key = hash_key(instances[i].id);
    std::size_t failed = 0, unparsed = 0;
    for (std::size_t s = 0; s < per; ++s) {
      const auto& text = responses[i * per + s];
      if (!text) {
        ++failed;
        continue;
      }
      ++succeeded;
      auto parsed = parse_response(*text, tpl, {config.reducer, config.seed, splitmix64(key + s)});
      if (!sampling) {
        parsed.id = rec.id;
        parsed.dataset_id = rec.dataset_id;
        parsed.label = rec.label;
        rec = std::move(parsed);
        continue;
      }
      if (!rec.raw) rec.raw = parsed.raw;
      if (parsed.score_pos) {
        rec.samples_pos.push_back(*parsed.score_pos);
      } else {
        ++unparsed;
      }
    }
    if (failed == per) {
      add_flag(rec, "request_failed");
    } else if (sampling && (failed > 0 || unparsed > 0)) {
      add_flag(rec, "incomplete_samples");
    }
    result.records.push_back(std::move(rec));
  }
  result.stats = finish(result.records, counters);
  if (!responses.empty() && succeeded == 0) throw NetworkError("every request to " + config.endpoint_url + " failed");
  return result;
}

GatewayResult two_stage_classify(std::span<const Instance> instances, TwoStageVariant variant,
                                 const PromptTemplate& tpl_in, const GatewayConfig& config) {
  validate(config);
  PromptTemplate tpl = tpl_in;
  tpl.kind = variant == TwoStageVariant::cot ? TemplateKind::two_stage_cot : TemplateKind::two_stage;
  Counters counters;
  Transport transport(config, counters);
  std::vector<PredictionRecord> records(instances.size());
  std::atomic<std::size_t> any_success{0};

  run_pool(instances.size(), config, transport, [&](std::size_t i, httplib::Client& client) {
    const auto& inst = instances[i];
    PredictionRecord rec = base_record(inst);
    const auto first = transport.send(render_prompt(tpl, inst.text), client);
    if (!first) {
      add_flag(rec, "request_failed");
      records[i] = std::move(rec);
      return;
    }
    any_success++;
    const auto stage1 = parse_response(*first, tpl);
    std::optional<std::size_t> cls;
    if (stage1.decision) {
      const auto d = lower(*stage1.decision);
      for (std::size_t c = 0; c < tpl.class_labels.size(); ++c) {
        if (lower(tpl.class_labels[c]) == d) cls = c;
      }
    }
    if (!cls) {
      rec.raw = stage1.raw;
      add_flag(rec, "unparseable");
      records[i] = std::move(rec);
      return;
    }
    rec.decision = tpl.class_labels[*cls];
    const auto second = transport.send(render_confidence_prompt(tpl, inst.text, *rec.decision), client);
    if (!second) {
      add_flag(rec, "request_failed");
      records[i] = std::move(rec);
      return;
    }
    const auto stage2 = parse_response(*second, tpl);
    rec.raw = stage2.raw;
    if (!stage2.decision_confidence) {
      add_flag(rec, "unparseable");
    } else {
      const double c = *stage2.decision_confidence;
      rec.decision_confidence = c;
      rec.score_pos = *cls == 0 ? c : 1.0 - c;
      rec.score_neg = 1.0 - *rec.score_pos;
    }
    records[i] = std::move(rec);
  });

  GatewayResult result;
  result.records = std::move(records);
  result.stats = finish(result.records, counters);
  if (!instances.empty() && any_success == 0) throw NetworkError("every request to " + config.endpoint_url + " failed");
  return result;
}

nlohmann::json gateway_stats_to_json(const GatewayStats& s) {
  return {{"requests", s.requests},
          {"retries", s.retries},
          {"failed_requests", s.failed_requests},
          {"flagged_records", s.flagged_records},
          {"max_in_flight_observed", s.max_in_flight_observed}};
}

}  // namespace opgran
