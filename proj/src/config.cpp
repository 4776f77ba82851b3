#include "eg/config.hpp"

#include <array>
#include <cmath>
#include <utility>

#include "eg/error.hpp"

namespace eg {

namespace {

template <typename E, std::size_t N>
using Names = std::array<std::pair<E, std::string_view>, N>;

constexpr Names<HeadKind, 3> kHeads{{{HeadKind::EGLayer, "eglayer"},
                                     {HeadKind::LPLayer, "lplayer"},
                                     {HeadKind::Linear, "linear"}}};
constexpr Names<Activation, 2> kActivations{
    {{Activation::Identity, "identity"}, {Activation::Rectified, "rectified"}}};
constexpr Names<AdjacencyLoss, 3> kAdjacencyLosses{
    {{AdjacencyLoss::BCE, "bce"}, {AdjacencyLoss::L1, "l1"}, {AdjacencyLoss::L2, "l2"}}};
constexpr Names<Regularizer, 3> kRegularizers{
    {{Regularizer::L2, "l2"}, {Regularizer::L1, "l1"}, {Regularizer::None, "none"}}};
constexpr Names<AmendMode, 2> kAmendModes{
    {{AmendMode::Hadamard, "hadamard"}, {AmendMode::Matmul, "matmul"}}};

template <typename E, std::size_t N>
std::string_view name_of(const Names<E, N>& table, E v) {
  for (const auto& [e, s] : table)
    if (e == v) return s;
  return "?";
}

template <typename E, std::size_t N>
E parse_enum(const Names<E, N>& table, std::string_view s, std::string_view field) {
  for (const auto& [e, name] : table)
    if (name == s) return e;
  std::string allowed;
  for (const auto& entry : table) {
    if (!allowed.empty()) allowed += "|";
    allowed += entry.second;
  }
  throw ParameterError("config field '" + std::string(field) + "': invalid value '" +
                       std::string(s) + "' (expected " + allowed + ")");
}

void require(bool ok, std::string_view field, const std::string& why) {
  if (!ok) throw ParameterError("config field '" + std::string(field) + "': " + why);
}

std::size_t get_count(const nlohmann::ordered_json& v, std::string_view field) {
  if (!v.is_number_unsigned()) {
    throw ParameterError("config field '" + std::string(field) + "': expected a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::string_view to_string(HeadKind v) { return name_of(kHeads, v); }
std::string_view to_string(Activation v) { return name_of(kActivations, v); }
std::string_view to_string(AdjacencyLoss v) { return name_of(kAdjacencyLosses, v); }
std::string_view to_string(Regularizer v) { return name_of(kRegularizers, v); }
std::string_view to_string(AmendMode v) { return name_of(kAmendModes, v); }

HeadKind parse_head(std::string_view s) { return parse_enum(kHeads, s, "head"); }

void RunConfig::validate() const {
  require(sigma_local > 0 && std::isfinite(sigma_local), "sigma_local", "must be positive");
  require(sigma_global > 0 && std::isfinite(sigma_global), "sigma_global", "must be positive");
  require(beta >= 0 && beta <= 1, "beta", "must lie in [0, 1]");
  require(alpha1 >= 0 && std::isfinite(alpha1), "alpha1", "must be non-negative");
  require(alpha2 >= 0 && std::isfinite(alpha2), "alpha2", "must be non-negative");
  require(gcn_layers == 1 || gcn_layers == 2, "gcn_layers", "must be 1 or 2");
  require(lr >= 0 && std::isfinite(lr), "lr", "must be non-negative");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(open_set_threshold > 0 && open_set_threshold < 1, "open_set_threshold",
          "must lie in (0, 1)");
  require(embedding_dim >= 1, "embedding_dim", "must be at least 1");
  require(n_way >= 1, "n_way", "must be at least 1");
  require(q_query >= 1, "q_query", "must be at least 1");
  require(episodes >= 1, "episodes", "must be at least 1");
  require(workers >= 1, "workers", "must be at least 1");
}

std::size_t RunConfig::effective_export_k() const {
  if (export_k != 0) return export_k;
  return dataset_profile == "office31" ? 70 : 150;
}

nlohmann::ordered_json config_to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["head"] = to_string(c.head);
  j["sigma_local"] = c.sigma_local;
  j["sigma_global"] = c.sigma_global;
  j["beta"] = c.beta;
  j["alpha1"] = c.alpha1;
  j["alpha2"] = c.alpha2;
  j["gcn_layers"] = c.gcn_layers;
  j["activation"] = to_string(c.activation);
  j["adjacency_loss"] = to_string(c.adjacency_loss);
  j["regularizer"] = to_string(c.regularizer);
  j["amend_mode"] = to_string(c.amend_mode);
  j["lr"] = c.lr;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["open_set_threshold"] = c.open_set_threshold;
  j["embedding_dim"] = c.embedding_dim;
  j["n_way"] = c.n_way;
  j["k_shot"] = c.k_shot;
  j["q_query"] = c.q_query;
  j["episodes"] = c.episodes;
  j["workers"] = c.workers;
  j["dataset_profile"] = c.dataset_profile;
  j["export_k"] = c.export_k;
  return j;
}

RunConfig config_from_json(const nlohmann::ordered_json& j, RunConfig c) {
  if (!j.is_object()) throw ParameterError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "head") c.head = parse_enum(kHeads, value.get<std::string>(), key);
      else if (key == "sigma_local") c.sigma_local = value.get<double>();
      else if (key == "sigma_global") c.sigma_global = value.get<double>();
      else if (key == "beta") c.beta = value.get<double>();
      else if (key == "alpha1") c.alpha1 = value.get<double>();
      else if (key == "alpha2") c.alpha2 = value.get<double>();
      else if (key == "gcn_layers") c.gcn_layers = value.get<int>();
      else if (key == "activation") c.activation = parse_enum(kActivations, value.get<std::string>(), key);
      else if (key == "adjacency_loss") c.adjacency_loss = parse_enum(kAdjacencyLosses, value.get<std::string>(), key);
      else if (key == "regularizer") c.regularizer = parse_enum(kRegularizers, value.get<std::string>(), key);
      else if (key == "amend_mode") c.amend_mode = parse_enum(kAmendModes, value.get<std::string>(), key);
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "steps") c.steps = get_count(value, key);
      else if (key == "batch_size") c.batch_size = get_count(value, key);
      else if (key == "seed") c.seed = get_count(value, key);
      else if (key == "open_set_threshold") c.open_set_threshold = value.get<double>();
      else if (key == "embedding_dim") c.embedding_dim = get_count(value, key);
      else if (key == "n_way") c.n_way = get_count(value, key);
      else if (key == "k_shot") c.k_shot = get_count(value, key);
      else if (key == "q_query") c.q_query = get_count(value, key);
      else if (key == "episodes") c.episodes = get_count(value, key);
      else if (key == "workers") c.workers = get_count(value, key);
      else if (key == "dataset_profile") c.dataset_profile = value.get<std::string>();
      else if (key == "export_k") c.export_k = get_count(value, key);
      else throw ParameterError("unknown config field '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      throw ParameterError("config field '" + key + "': wrong type");
    }
  }
  c.validate();
  return c;
}

Rng substream(std::uint64_t seed, std::string_view name) {
  const std::uint64_t h = fnv1a(name);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return Rng(seq);
}

}  // namespace eg
