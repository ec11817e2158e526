#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dbgl/data.h"
#include "dbgl/nn.h"

namespace dbgl::graph {

using diff::Tensor;

// Edges of one time step of a batch: one edge per observed (patient,
// variable) pair, sorted by (patient, variable). Step t of a batch is the
// t-th timestamp of each episode; shorter episodes contribute nothing.
struct GraphStep {
  std::size_t num_patients = 0;
  std::size_t num_variables = 0;
  std::vector<std::size_t> patient;   // per edge
  std::vector<std::size_t> variable;  // per edge
  std::vector<double> value;          // observed value
  std::vector<double> time;           // absolute timestamp (hours)
  std::vector<double> delta_t;        // elapsed interval of the observation
  std::size_t step = 0;

  std::size_t num_edges() const { return patient.size(); }
  bool empty() const { return patient.empty(); }
  // Row of the (patient, variable) pair in a [B*V, d] bank.
  std::vector<std::size_t> pair_rows() const;
};

GraphStep build_graph_step(std::span<const data::Episode* const> batch, std::size_t t);

struct EdgeEmbeddingParams {
  nn::Linear value;    // 1 -> d
  Tensor time_weight;  // [1, d]: frequency of the linear and periodic parts
  Tensor time_phase;   // [d]
  Tensor var_embedding;  // [V, d]

  std::size_t dim() const { return time_phase.numel(); }
  static EdgeEmbeddingParams create(std::size_t num_variables, std::size_t d, Rng& rng);
  void append_to(nn::NamedParams& out) const;
};

// Time2Vec of a column of times [E,1]: component 0 linear, the rest sin.
Tensor time_embedding(const Tensor& times, const EdgeEmbeddingParams& p);

// value projection + time embedding + variable embedding for every edge.
// `use_time` false drops the time component. Throws DataError on a
// non-finite edge value.
Tensor init_edge_embeddings(const GraphStep& step, const EdgeEmbeddingParams& p,
                            bool use_time = true);

struct NodeStates {
  Tensor patients;   // [B, d]
  Tensor variables;  // [V, d]
};

// Patients start at the constant unit vector ones / sqrt(d) (untracked);
// variables start from the learnable table.
NodeStates init_node_states(std::size_t batch_size, const Tensor& variable_table);

struct EdgeSageLayer {
  nn::Linear message;  // [v_src || e] 2d -> d, shared by both directions
  nn::Linear node;     // [v || aggregated message] 2d -> d
  nn::Linear edge;     // [v_patient || v_variable || e] 3d -> d

  static EdgeSageLayer create(std::size_t d, Rng& rng);
  void append_to(nn::NamedParams& out, const std::string& prefix) const;
};

struct LayerOutput {
  NodeStates states;
  Tensor edges;
};

LayerOutput message_pass_layer(const GraphStep& step, const NodeStates& states,
                               const Tensor& edges, const EdgeSageLayer& layer);

// Applies the layers in order. Throws ConfigError for an empty stack.
LayerOutput message_pass(const GraphStep& step, const NodeStates& states,
                         const Tensor& edges, std::span<const EdgeSageLayer> layers);

}  // namespace dbgl::graph
