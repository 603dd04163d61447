#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "json.hpp"
#include "spoof/error.hpp"
#include "spoof/image.hpp"
#include "spoof/random.hpp"

namespace spoof {

// ---------------------------------------------------------------------------
// Direct encoding

struct DirectGenome {
  Image pixels;
  double mutation_rate = 0.1;
  /// Generations between halvings of the mutation rate; 0 disables halving.
  std::uint64_t rate_halving_period = 1000;

  bool operator==(const DirectGenome&) const = default;
};

inline double direct_mutation_rate(const DirectGenome& g, std::uint64_t generation) {
  if (g.rate_halving_period == 0) return g.mutation_rate;
  return g.mutation_rate * std::ldexp(1.0, -static_cast<int>(std::min<std::uint64_t>(generation / g.rate_halving_period, 1000)));
}

/// Resamples each element from U(0,1) with probability
/// mutation_rate * 0.5^floor(generation / rate_halving_period).
inline DirectGenome mutate_direct(const DirectGenome& g, std::uint64_t generation, Rng& rng) {
  const double rate = direct_mutation_rate(g, generation);
  std::vector<float> data(g.pixels.data().begin(), g.pixels.data().end());
  for (auto& v : data) {
    if (rng.uniform01() < rate) v = static_cast<float>(rng.uniform01());
  }
  DirectGenome out = g;
  out.pixels = Image(g.pixels.shape(), std::move(data));
  return out;
}

inline Image render_direct(const DirectGenome& g) { return g.pixels; }

// ---------------------------------------------------------------------------
// CPPN encoding

enum class Activation { Sine, Sigmoid, Gaussian, Identity, Abs };
inline constexpr Activation kActivations[] = {Activation::Sine, Activation::Sigmoid, Activation::Gaussian,
                                              Activation::Identity, Activation::Abs};

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Sine: return "sine";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Gaussian: return "gaussian";
    case Activation::Identity: return "identity";
    case Activation::Abs: return "abs";
  }
  return "identity";
}

inline Activation parse_activation(std::string_view s) {
  for (auto a : kActivations)
    if (to_string(a) == s) return a;
  fail(ErrorKind::Format, "unknown activation '" + std::string(s) + "'");
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Sine: return std::sin(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Gaussian: return std::exp(-x * x);
    case Activation::Identity: return x;
    case Activation::Abs: return std::abs(x);
  }
  return x;
}

enum class NodeRole { Input, Hidden, Output };

struct CppnNode {
  std::uint64_t id = 0;
  NodeRole role = NodeRole::Hidden;
  Activation activation = Activation::Identity;

  bool operator==(const CppnNode&) const = default;
};

struct CppnConnection {
  std::uint64_t src = 0;
  std::uint64_t dst = 0;
  double weight = 0.0;
  bool enabled = true;
  std::uint64_t innovation = 0;

  bool operator==(const CppnConnection&) const = default;
};

/// Feed-forward CPPN. Inputs are node ids 0..3 (x, y, r, bias); outputs
/// follow, one per image channel.
struct CppnGenome {
  static constexpr std::size_t kInputs = 4;

  std::vector<CppnNode> nodes;
  std::vector<CppnConnection> connections;
  std::uint64_t next_innovation = 0;
  std::uint64_t next_node_id = 0;

  std::size_t output_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.role == NodeRole::Output; }));
  }
  std::size_t hidden_count() const {
    return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.role == NodeRole::Hidden; }));
  }
  const CppnNode* find(std::uint64_t id) const {
    for (const auto& n : nodes)
      if (n.id == id) return &n;
    return nullptr;
  }

  bool operator==(const CppnGenome&) const = default;
};

/// NEAT-style operator probabilities.
struct MutationParams {
  double weight_perturb_prob = 0.8;
  double weight_sigma = 0.5;
  double add_connection_prob = 0.05;
  double add_node_prob = 0.03;
  double toggle_enable_prob = 0.01;
  double activation_swap_prob = 0.05;

  void validate() const {
    for (double p : {weight_perturb_prob, add_connection_prob, add_node_prob, toggle_enable_prob, activation_swap_prob}) {
      if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::Configuration, "mutation probabilities must lie in [0,1]");
    }
    if (!(weight_sigma >= 0.0)) fail(ErrorKind::Configuration, "weight sigma must be >= 0");
  }
};

namespace cppn_detail {

/// Topological order over all connections (enabled or not); std::nullopt
/// when the graph has a cycle.
inline std::optional<std::vector<std::uint64_t>> topological_order(const CppnGenome& g) {
  std::map<std::uint64_t, std::size_t> indegree;
  std::map<std::uint64_t, std::vector<std::uint64_t>> edges;
  for (const auto& n : g.nodes) indegree[n.id] = 0;
  for (const auto& c : g.connections) {
    ++indegree[c.dst];
    edges[c.src].push_back(c.dst);
  }
  std::vector<std::uint64_t> ready;
  for (const auto& n : g.nodes)
    if (indegree[n.id] == 0) ready.push_back(n.id);
  std::vector<std::uint64_t> order;
  while (!ready.empty()) {
    const auto id = ready.front();
    ready.erase(ready.begin());
    order.push_back(id);
    for (auto dst : edges[id])
      if (--indegree[dst] == 0) ready.push_back(dst);
  }
  if (order.size() != g.nodes.size()) return std::nullopt;
  return order;
}

inline bool reaches(const CppnGenome& g, std::uint64_t from, std::uint64_t to) {
  std::vector<std::uint64_t> stack{from};
  std::vector<std::uint64_t> seen;
  while (!stack.empty()) {
    const auto id = stack.back();
    stack.pop_back();
    if (id == to) return true;
    if (std::find(seen.begin(), seen.end(), id) != seen.end()) continue;
    seen.push_back(id);
    for (const auto& c : g.connections)
      if (c.src == id) stack.push_back(c.dst);
  }
  return false;
}

}  // namespace cppn_detail

/// Checks node/connection references, unique ids and innovations, output
/// count and acyclicity.
inline void validate_cppn(const CppnGenome& g, std::optional<std::size_t> channels = std::nullopt) {
  std::vector<std::uint64_t> ids;
  std::size_t inputs = 0;
  for (const auto& n : g.nodes) {
    ids.push_back(n.id);
    if (n.role == NodeRole::Input) ++inputs;
    if (n.id >= g.next_node_id) fail(ErrorKind::Validation, "node id " + std::to_string(n.id) + " >= next_node_id");
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) fail(ErrorKind::Validation, "duplicate node id");
  if (inputs != CppnGenome::kInputs) fail(ErrorKind::Validation, "CPPN must have exactly 4 input nodes");
  if (channels && g.output_count() != *channels) {
    fail(ErrorKind::Validation, "CPPN has " + std::to_string(g.output_count()) + " outputs for " + std::to_string(*channels) + " channels");
  }
  std::vector<std::uint64_t> innovations;
  for (const auto& c : g.connections) {
    const auto* src = g.find(c.src);
    const auto* dst = g.find(c.dst);
    if (!src || !dst) fail(ErrorKind::Validation, "connection references a missing node");
    if (dst->role == NodeRole::Input) fail(ErrorKind::Validation, "connection into an input node");
    if (src->role == NodeRole::Output) fail(ErrorKind::Validation, "connection out of an output node");
    if (!std::isfinite(c.weight)) fail(ErrorKind::Validation, "non-finite connection weight");
    if (c.innovation >= g.next_innovation) fail(ErrorKind::Validation, "innovation number >= next_innovation");
    innovations.push_back(c.innovation);
  }
  std::sort(innovations.begin(), innovations.end());
  if (std::adjacent_find(innovations.begin(), innovations.end()) != innovations.end()) {
    fail(ErrorKind::Validation, "duplicate innovation number");
  }
  if (!cppn_detail::topological_order(g)) fail(ErrorKind::Validation, "CPPN connection graph has a cycle");
}

/// Minimal genome: every input wired to every output with N(0,1) weights.
inline CppnGenome minimal_cppn(std::size_t channels, Rng& rng) {
  CppnGenome g;
  for (std::size_t i = 0; i < CppnGenome::kInputs; ++i) g.nodes.push_back({g.next_node_id++, NodeRole::Input, Activation::Identity});
  for (std::size_t o = 0; o < channels; ++o) g.nodes.push_back({g.next_node_id++, NodeRole::Output, Activation::Identity});
  for (std::size_t o = 0; o < channels; ++o) {
    for (std::size_t i = 0; i < CppnGenome::kInputs; ++i) {
      g.connections.push_back({i, CppnGenome::kInputs + o, rng.normal(), true, g.next_innovation++});
    }
  }
  return g;
}

/// Evaluates the network at every pixel: inputs x, y in [-1, 1] (center 0),
/// r = sqrt(x^2 + y^2), bias 1. Output node k, squashed by a sigmoid, is
/// channel k.
inline Image render_cppn(const CppnGenome& g, std::size_t height, std::size_t width, std::size_t channels) {
  Image::check_dimensions({channels, height, width});
  const auto order = cppn_detail::topological_order(g);
  if (!order) fail(ErrorKind::Validation, "CPPN connection graph has a cycle");
  if (g.output_count() != channels) {
    fail(ErrorKind::Validation, "CPPN has " + std::to_string(g.output_count()) + " outputs for " + std::to_string(channels) + " channels");
  }

  std::map<std::uint64_t, std::size_t> slot;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) slot[g.nodes[i].id] = i;
  std::vector<std::vector<std::pair<std::size_t, double>>> incoming(g.nodes.size());
  for (const auto& c : g.connections)
    if (c.enabled) incoming[slot.at(c.dst)].emplace_back(slot.at(c.src), c.weight);
  std::vector<std::size_t> order_slots;
  for (auto id : *order) order_slots.push_back(slot.at(id));
  std::vector<std::size_t> outputs;
  std::vector<std::size_t> inputs;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (g.nodes[i].role == NodeRole::Output) outputs.push_back(i);
    if (g.nodes[i].role == NodeRole::Input) inputs.push_back(i);
  }
  // outputs and inputs are sorted by node id so channel order is stable
  std::sort(outputs.begin(), outputs.end(), [&](auto a, auto b) { return g.nodes[a].id < g.nodes[b].id; });
  std::sort(inputs.begin(), inputs.end(), [&](auto a, auto b) { return g.nodes[a].id < g.nodes[b].id; });

  std::vector<float> data(channels * height * width);
  std::vector<double> value(g.nodes.size());
  for (std::size_t row = 0; row < height; ++row) {
    const double y = height == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(row) / static_cast<double>(height - 1);
    for (std::size_t col = 0; col < width; ++col) {
      const double x = width == 1 ? 0.0 : -1.0 + 2.0 * static_cast<double>(col) / static_cast<double>(width - 1);
      const double in[CppnGenome::kInputs] = {x, y, std::sqrt(x * x + y * y), 1.0};
      for (auto s : order_slots) {
        const auto& node = g.nodes[s];
        if (node.role == NodeRole::Input) {
          const auto k = static_cast<std::size_t>(std::find(inputs.begin(), inputs.end(), s) - inputs.begin());
          value[s] = in[k];
          continue;
        }
        double sum = 0.0;
        for (const auto& [src, w] : incoming[s]) sum += w * value[src];
        value[s] = activate(node.activation, sum);
      }
      for (std::size_t ch = 0; ch < channels; ++ch) {
        data[(ch * height + row) * width + col] = static_cast<float>(sigmoid(value[outputs[ch]]));
      }
    }
  }
  return Image({channels, height, width}, std::move(data));
}

/// Applies each NEAT-style operator with its probability; operators that
/// have nothing to act on are skipped. The result stays acyclic.
inline CppnGenome mutate_cppn(const CppnGenome& parent, const MutationParams& params, Rng& rng) {
  params.validate();
  CppnGenome g = parent;

  if (rng.bernoulli(params.weight_perturb_prob)) {
    for (auto& c : g.connections) c.weight += rng.normal(0.0, params.weight_sigma);
  }

  if (rng.bernoulli(params.add_connection_prob)) {
    std::vector<std::pair<std::uint64_t, std::uint64_t>> candidates;
    for (const auto& src : g.nodes) {
      if (src.role == NodeRole::Output) continue;
      for (const auto& dst : g.nodes) {
        if (dst.role == NodeRole::Input || src.id == dst.id) continue;
        const bool exists = std::any_of(g.connections.begin(), g.connections.end(),
                                        [&](const auto& c) { return c.src == src.id && c.dst == dst.id; });
        if (exists || cppn_detail::reaches(g, dst.id, src.id)) continue;
        candidates.emplace_back(src.id, dst.id);
      }
    }
    if (!candidates.empty()) {
      const auto [src, dst] = candidates[rng.uniform_index(candidates.size())];
      g.connections.push_back({src, dst, rng.normal(), true, g.next_innovation++});
    }
  }

  if (rng.bernoulli(params.add_node_prob)) {
    std::vector<std::size_t> enabled;
    for (std::size_t i = 0; i < g.connections.size(); ++i)
      if (g.connections[i].enabled) enabled.push_back(i);
    if (!enabled.empty()) {
      const auto split = enabled[rng.uniform_index(enabled.size())];
      g.connections[split].enabled = false;
      const auto old = g.connections[split];
      const auto act = kActivations[rng.uniform_index(std::size(kActivations))];
      const auto id = g.next_node_id++;
      g.nodes.push_back({id, NodeRole::Hidden, act});
      g.connections.push_back({old.src, id, 1.0, true, g.next_innovation++});
      g.connections.push_back({id, old.dst, old.weight, true, g.next_innovation++});
    }
  }

  if (rng.bernoulli(params.toggle_enable_prob) && !g.connections.empty()) {
    auto& c = g.connections[rng.uniform_index(g.connections.size())];
    c.enabled = !c.enabled;
  }

  if (rng.bernoulli(params.activation_swap_prob)) {
    std::vector<std::size_t> hidden;
    for (std::size_t i = 0; i < g.nodes.size(); ++i)
      if (g.nodes[i].role == NodeRole::Hidden) hidden.push_back(i);
    if (!hidden.empty()) {
      auto& node = g.nodes[hidden[rng.uniform_index(hidden.size())]];
      const auto current = node.activation;
      std::vector<Activation> others;
      for (auto a : kActivations)
        if (a != current) others.push_back(a);
      node.activation = others[rng.uniform_index(others.size())];
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Either encoding

enum class Encoding { Direct, Cppn };

inline std::string_view to_string(Encoding e) { return e == Encoding::Direct ? "direct" : "cppn"; }

inline Encoding parse_encoding(std::string_view s) {
  if (s == "direct") return Encoding::Direct;
  if (s == "cppn") return Encoding::Cppn;
  fail(ErrorKind::Configuration, "unknown encoding '" + std::string(s) + "'");
}

using Genome = std::variant<DirectGenome, CppnGenome>;

struct DirectParams {
  double mutation_rate = 0.1;
  std::uint64_t rate_halving_period = 1000;
};

inline Genome random_genome(Encoding kind, const ImageShape& shape, Rng& rng, const DirectParams& direct = {}) {
  Image::check_dimensions(shape);
  if (kind == Encoding::Direct) {
    std::vector<float> data(shape.size());
    for (auto& v : data) v = static_cast<float>(rng.uniform01());
    return DirectGenome{Image(shape, std::move(data)), direct.mutation_rate, direct.rate_halving_period};
  }
  return minimal_cppn(shape.channels, rng);
}

inline Image render(const Genome& genome, const ImageShape& shape) {
  if (const auto* d = std::get_if<DirectGenome>(&genome)) {
    if (d->pixels.shape() != shape) fail(ErrorKind::Shape, "direct genome shape " + to_string(d->pixels.shape()) + " != " + to_string(shape));
    return render_direct(*d);
  }
  return render_cppn(std::get<CppnGenome>(genome), shape.height, shape.width, shape.channels);
}

inline Genome mutate(const Genome& genome, std::uint64_t generation, const MutationParams& params, Rng& rng) {
  if (const auto* d = std::get_if<DirectGenome>(&genome)) return mutate_direct(*d, generation, rng);
  return mutate_cppn(std::get<CppnGenome>(genome), params, rng);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const CppnGenome& g) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : g.nodes) {
    const char* role = n.role == NodeRole::Input ? "input" : n.role == NodeRole::Output ? "output" : "hidden";
    nodes.push_back({{"id", n.id}, {"role", role}, {"activation", to_string(n.activation)}});
  }
  nlohmann::json conns = nlohmann::json::array();
  for (const auto& c : g.connections) {
    conns.push_back({{"src", c.src}, {"dst", c.dst}, {"weight", c.weight}, {"enabled", c.enabled}, {"innovation", c.innovation}});
  }
  return {{"kind", "cppn"}, {"nodes", nodes}, {"connections", conns}, {"next_innovation", g.next_innovation},
          {"next_node_id", g.next_node_id}};
}

inline CppnGenome cppn_from_json(const nlohmann::json& j) {
  try {
    CppnGenome g;
    for (const auto& n : j.at("nodes")) {
      const auto role = n.at("role").get<std::string>();
      const NodeRole r = role == "input" ? NodeRole::Input : role == "output" ? NodeRole::Output : NodeRole::Hidden;
      if (role != "input" && role != "output" && role != "hidden") fail(ErrorKind::Format, "unknown node role '" + role + "'");
      g.nodes.push_back({n.at("id").get<std::uint64_t>(), r, parse_activation(n.at("activation").get<std::string>())});
    }
    for (const auto& c : j.at("connections")) {
      g.connections.push_back({c.at("src"), c.at("dst"), c.at("weight"), c.at("enabled"), c.at("innovation")});
    }
    g.next_innovation = j.at("next_innovation");
    g.next_node_id = j.at("next_node_id");
    validate_cppn(g);
    return g;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed CPPN genome: ") + e.what());
  }
}

inline nlohmann::json to_json(const DirectGenome& g) {
  const auto& s = g.pixels.shape();
  return {{"kind", "direct"}, {"shape", {s.channels, s.height, s.width}}, {"mutation_rate", g.mutation_rate},
          {"rate_halving_period", g.rate_halving_period},
          {"pixels", std::vector<float>(g.pixels.data().begin(), g.pixels.data().end())}};
}

inline DirectGenome direct_from_json(const nlohmann::json& j) {
  try {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) fail(ErrorKind::Format, "direct genome shape must be [C,H,W]");
    return DirectGenome{Image({shape[0], shape[1], shape[2]}, j.at("pixels").get<std::vector<float>>()),
                        j.at("mutation_rate").get<double>(), j.at("rate_halving_period").get<std::uint64_t>()};
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("malformed direct genome: ") + e.what());
  }
}

inline nlohmann::json to_json(const Genome& g) {
  return std::visit([](const auto& x) { return to_json(x); }, g);
}

inline Genome genome_from_json(const nlohmann::json& j) {
  const auto kind = j.value("kind", std::string{});
  if (kind == "direct") return direct_from_json(j);
  if (kind == "cppn") return cppn_from_json(j);
  fail(ErrorKind::Format, "unknown genome kind '" + kind + "'");
}

}  // namespace spoof
