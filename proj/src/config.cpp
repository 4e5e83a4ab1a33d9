#include "protoalign/config.hpp"

#include <array>
#include <stdexcept>

namespace protoalign {

namespace {

template <typename E, std::size_t N>
using EnumNames = std::array<std::pair<E, const char*>, N>;

constexpr EnumNames<AlignLoss, 3> kAlignNames{{{AlignLoss::ProNCE, "pronce"},
                                              {AlignLoss::InfoNCE, "infonce"},
                                              {AlignLoss::SemanticMatching, "sm"}}};
constexpr EnumNames<PrototypeFeatures, 2> kPrototypeNames{
    {{PrototypeFeatures::DomainBiased, "domain_biased"}, {PrototypeFeatures::Raw, "raw"}}};
constexpr EnumNames<PseudoLabelSource, 2> kPseudoNames{
    {{PseudoLabelSource::SourceClassifier, "source_classifier"},
     {PseudoLabelSource::GraphClassifier, "graph_classifier"}}};
constexpr EnumNames<Classifier, 3> kClassifierNames{
    {{Classifier::Auto, "auto"}, {Classifier::Source, "C"}, {Classifier::Graph, "G_C"}}};
constexpr EnumNames<NegativePolicy, 2> kNegativeNames{
    {{NegativePolicy::BothDomains, "both"}, {NegativePolicy::CrossOnly, "cross_only"}}};
constexpr EnumNames<ThresholdMode, 2> kThresholdNames{
    {{ThresholdMode::PerBatch, "per_batch"}, {ThresholdMode::Running, "running"}}};

template <typename E, std::size_t N>
std::string name_of(const EnumNames<E, N>& names, E v) {
  for (const auto& [e, s] : names)
    if (e == v) return s;
  throw std::logic_error("unnamed enum value");
}

template <typename E, std::size_t N>
E parse_enum(const EnumNames<E, N>& names, const std::string& key, const std::string& s) {
  for (const auto& [e, n] : names)
    if (s == n) return e;
  std::string allowed;
  for (const auto& [e, n] : names) allowed += (allowed.empty() ? "" : ", ") + std::string(n);
  throw std::invalid_argument("config key '" + key + "': unknown value '" + s + "' (allowed: " + allowed + ")");
}

void flatten_into(const nlohmann::json& j, const std::string& prefix,
                  std::vector<std::pair<std::string, nlohmann::json>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it)
      flatten_into(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), out);
  } else {
    out.emplace_back(prefix, j);
  }
}

nlohmann::json::json_pointer pointer_of(const std::string& dotted) {
  std::string p;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    p += "/" + dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return nlohmann::json::json_pointer(p);
}

bool same_kind(const nlohmann::json& a, const nlohmann::json& b) {
  if (a.is_number() && b.is_number()) {
    // Integers may not silently become fractional or negative.
    if (a.is_number_unsigned()) return b.is_number_unsigned();
    if (a.is_number_integer()) return b.is_number_integer();
    return true;
  }
  return a.type() == b.type();
}

}  // namespace

std::string to_string(AlignLoss v) { return name_of(kAlignNames, v); }
std::string to_string(PrototypeFeatures v) { return name_of(kPrototypeNames, v); }
std::string to_string(PseudoLabelSource v) { return name_of(kPseudoNames, v); }
std::string to_string(Classifier v) { return name_of(kClassifierNames, v); }
std::string to_string(NegativePolicy v) { return name_of(kNegativeNames, v); }
std::string to_string(ThresholdMode v) { return name_of(kThresholdNames, v); }

bool TrainConfig::needs_graph() const {
  return losses.ce_gcn || losses.bce || (losses.align && prototypes == PrototypeFeatures::DomainBiased) ||
         pseudo_labels == PseudoLabelSource::GraphClassifier || mi_on_graph;
}

Classifier TrainConfig::reported_classifier() const {
  if (report != Classifier::Auto) return report;
  return losses.ce_gcn ? Classifier::Graph : Classifier::Source;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid config: " + m); };
  if (iterations == 0) fail("train.iterations must be positive");
  if (batch_size == 0) fail("train.batch_size must be positive");
  if (!(lr > 0.0)) fail("train.lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("train.momentum must lie in [0, 1)");
  if (!(rho >= 0.0 && rho <= 1.0)) fail("method.rho must lie in [0, 1]");
  if (!(weights.tau > 0.0)) fail("loss.tau must be positive");
  if (!(losses.ce || losses.mi || losses.ce_gcn || losses.bce || losses.align)) fail("no loss term enabled");
  if (pseudo_labels == PseudoLabelSource::GraphClassifier && !losses.ce_gcn) {
    fail("graph-classifier pseudo-labels require flags.ce_gcn");
  }
  if (report == Classifier::Graph && !losses.ce_gcn) fail("reporting G_C requires flags.ce_gcn");
  if (mi_on_graph && !losses.mi) fail("method.mi_on_graph requires flags.mi");
  if (model.classes < 2) fail("model.classes must be at least 2");
  if (model.input_dim == 0 || model.hidden_dim == 0 || model.feat_dim == 0 || model.affinity_hidden == 0) {
    fail("model dimensions must be positive");
  }
  if (eval_batch == 0) fail("eval.batch must be positive");
  if (!(threshold_momentum >= 0.0 && threshold_momentum < 1.0)) fail("method.threshold_momentum must lie in [0, 1)");
  if (data.kind != "two_moons" && data.kind != "csv") fail("data.kind must be two_moons or csv");
  if (data.kind == "two_moons" && model.input_dim != 2) fail("two_moons data needs model.input_dim = 2");
  if (data.kind == "two_moons" && model.classes != 2) fail("two_moons data needs model.classes = 2");
  if (data.kind == "csv" && (data.source_csv.empty() || data.target_csv.empty())) {
    fail("csv data needs data.source_csv and data.target_csv");
  }
  if (early_stop.enabled && early_stop.window == 0) fail("early_stop.window must be positive");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["train"] = {{"iterations", c.iterations}, {"batch_size", c.batch_size}, {"lr", c.lr},
                {"momentum", c.momentum},     {"anneal", c.anneal}};
  j["loss"] = {{"lambda_gcn", c.weights.lambda_gcn}, {"lambda_bce", c.weights.lambda_bce},
               {"lambda_mi", c.weights.lambda_mi},   {"alpha", c.weights.alpha},
               {"tau", c.weights.tau}};
  j["flags"] = {{"ce", c.losses.ce},         {"mi", c.losses.mi},   {"ce_gcn", c.losses.ce_gcn},
                {"bce", c.losses.bce},       {"align", c.losses.align}};
  j["method"] = {{"align_loss", to_string(c.align)},
                 {"prototypes", to_string(c.prototypes)},
                 {"negatives", to_string(c.negatives)},
                 {"differentiate_weights", c.differentiate_weights},
                 {"pseudo_labels", to_string(c.pseudo_labels)},
                 {"target_trust_filter", c.target_trust_filter},
                 {"keep_self_scores", c.keep_self_scores},
                 {"mi_on_graph", c.mi_on_graph},
                 {"threshold_mode", to_string(c.threshold_mode)},
                 {"threshold_momentum", c.threshold_momentum},
                 {"rho", c.rho}};
  j["model"] = {{"input_dim", c.model.input_dim},   {"hidden_dim", c.model.hidden_dim},
                {"feat_dim", c.model.feat_dim},     {"affinity_hidden", c.model.affinity_hidden},
                {"classes", c.model.classes}};
  j["data"] = {{"kind", c.data.kind},
               {"n_per_domain", c.data.moons.n_per_domain},
               {"noise", c.data.moons.noise},
               {"rotation_deg", c.data.moons.rotation_deg},
               {"translation_x", c.data.moons.translation_x},
               {"translation_y", c.data.moons.translation_y},
               {"class0_fraction", c.data.moons.class0_fraction},
               {"source_csv", c.data.source_csv},
               {"target_csv", c.data.target_csv}};
  j["eval"] = {{"classifier", to_string(c.report)}, {"batch", c.eval_batch}, {"a_distance", c.eval_a_distance}};
  j["early_stop"] = {{"enabled", c.early_stop.enabled}, {"window", c.early_stop.window},
                     {"rel_tol", c.early_stop.rel_tol}};
  j["output"] = {{"checkpoint_every", c.checkpoint_every}, {"debug_graph", c.debug_graph}};
  return j;
}

std::vector<std::pair<std::string, nlohmann::json>> flatten_config(const nlohmann::json& j) {
  std::vector<std::pair<std::string, nlohmann::json>> out;
  flatten_into(j, "", out);
  return out;
}

TrainConfig config_from_json(const nlohmann::json& input) {
  if (!input.is_object()) throw std::invalid_argument("config must be a JSON object");
  nlohmann::json doc = to_json(TrainConfig{});
  for (const auto& [key, value] : flatten_config(input)) {
    const auto ptr = pointer_of(key);
    if (!doc.contains(ptr) || doc.at(ptr).is_object()) throw std::invalid_argument("unknown config key '" + key + "'");
    if (!same_kind(doc.at(ptr), value)) {
      throw std::invalid_argument("config key '" + key + "': expected " + std::string(doc.at(ptr).type_name()) +
                                  ", got " + value.type_name());
    }
    doc[ptr] = value;
  }

  TrainConfig c;
  auto get = [&](const char* key) -> const nlohmann::json& { return doc.at(pointer_of(key)); };
  try {
    c.seed = get("seed").get<std::uint64_t>();
    c.iterations = get("train.iterations").get<std::size_t>();
    c.batch_size = get("train.batch_size").get<std::size_t>();
    c.lr = get("train.lr").get<double>();
    c.momentum = get("train.momentum").get<double>();
    c.anneal = get("train.anneal").get<bool>();
    c.weights.lambda_gcn = get("loss.lambda_gcn").get<double>();
    c.weights.lambda_bce = get("loss.lambda_bce").get<double>();
    c.weights.lambda_mi = get("loss.lambda_mi").get<double>();
    c.weights.alpha = get("loss.alpha").get<double>();
    c.weights.tau = get("loss.tau").get<double>();
    c.losses.ce = get("flags.ce").get<bool>();
    c.losses.mi = get("flags.mi").get<bool>();
    c.losses.ce_gcn = get("flags.ce_gcn").get<bool>();
    c.losses.bce = get("flags.bce").get<bool>();
    c.losses.align = get("flags.align").get<bool>();
    c.align = parse_enum(kAlignNames, "method.align_loss", get("method.align_loss").get<std::string>());
    c.prototypes = parse_enum(kPrototypeNames, "method.prototypes", get("method.prototypes").get<std::string>());
    c.negatives = parse_enum(kNegativeNames, "method.negatives", get("method.negatives").get<std::string>());
    c.differentiate_weights = get("method.differentiate_weights").get<bool>();
    c.pseudo_labels = parse_enum(kPseudoNames, "method.pseudo_labels", get("method.pseudo_labels").get<std::string>());
    c.target_trust_filter = get("method.target_trust_filter").get<bool>();
    c.keep_self_scores = get("method.keep_self_scores").get<bool>();
    c.mi_on_graph = get("method.mi_on_graph").get<bool>();
    c.threshold_mode =
        parse_enum(kThresholdNames, "method.threshold_mode", get("method.threshold_mode").get<std::string>());
    c.threshold_momentum = get("method.threshold_momentum").get<double>();
    c.rho = get("method.rho").get<double>();
    c.model.input_dim = get("model.input_dim").get<std::size_t>();
    c.model.hidden_dim = get("model.hidden_dim").get<std::size_t>();
    c.model.feat_dim = get("model.feat_dim").get<std::size_t>();
    c.model.affinity_hidden = get("model.affinity_hidden").get<std::size_t>();
    c.model.classes = get("model.classes").get<std::size_t>();
    c.data.kind = get("data.kind").get<std::string>();
    c.data.moons.n_per_domain = get("data.n_per_domain").get<std::size_t>();
    c.data.moons.noise = get("data.noise").get<double>();
    c.data.moons.rotation_deg = get("data.rotation_deg").get<double>();
    c.data.moons.translation_x = get("data.translation_x").get<double>();
    c.data.moons.translation_y = get("data.translation_y").get<double>();
    c.data.moons.class0_fraction = get("data.class0_fraction").get<double>();
    c.data.source_csv = get("data.source_csv").get<std::string>();
    c.data.target_csv = get("data.target_csv").get<std::string>();
    c.report = parse_enum(kClassifierNames, "eval.classifier", get("eval.classifier").get<std::string>());
    c.eval_batch = get("eval.batch").get<std::size_t>();
    c.eval_a_distance = get("eval.a_distance").get<bool>();
    c.early_stop.enabled = get("early_stop.enabled").get<bool>();
    c.early_stop.window = get("early_stop.window").get<std::size_t>();
    c.early_stop.rel_tol = get("early_stop.rel_tol").get<double>();
    c.checkpoint_every = get("output.checkpoint_every").get<std::size_t>();
    c.debug_graph = get("output.debug_graph").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

void apply_override(nlohmann::json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw std::invalid_argument("override '" + std::string(assignment) + "' is not of the form key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  const auto ptr = pointer_of(key);
  if (!doc.contains(ptr) || doc.at(ptr).is_object()) throw std::invalid_argument("unknown config key '" + key + "'");
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  if (!same_kind(doc.at(ptr), value)) {
    throw std::invalid_argument("override '" + key + "': expected " + std::string(doc.at(ptr).type_name()) +
                                ", got " + value.type_name());
  }
  doc[ptr] = value;
}

}  // namespace protoalign
