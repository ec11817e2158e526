#include "dbgl/graph.h"

#include <cmath>
#include <sstream>

#include "dbgl/errors.h"

namespace dbgl::graph {

namespace d = diff;

std::vector<std::size_t> GraphStep::pair_rows() const {
  std::vector<std::size_t> rows(num_edges());
  for (std::size_t i = 0; i < rows.size(); ++i)
    rows[i] = patient[i] * num_variables + variable[i];
  return rows;
}

GraphStep build_graph_step(std::span<const data::Episode* const> batch, std::size_t t) {
  GraphStep g;
  g.num_patients = batch.size();
  g.num_variables = batch.empty() ? 0 : batch[0]->num_variables;
  g.step = t;
  for (std::size_t p = 0; p < batch.size(); ++p) {
    const data::Episode& ep = *batch[p];
    if (ep.num_variables != g.num_variables)
      throw DimensionError("build_graph_step: episodes disagree on the variable count");
    if (t >= ep.steps()) continue;
    for (std::size_t n = 0; n < ep.num_variables; ++n) {
      if (!ep.observed(t, n)) continue;
      g.patient.push_back(p);
      g.variable.push_back(n);
      g.value.push_back(ep.value(t, n));
      g.time.push_back(ep.times[t]);
      g.delta_t.push_back(ep.dt(t, n));
    }
  }
  return g;
}

EdgeEmbeddingParams EdgeEmbeddingParams::create(std::size_t num_variables, std::size_t d,
                                                Rng& rng) {
  EdgeEmbeddingParams p;
  p.value = nn::make_linear(1, d, rng);
  p.time_weight = nn::uniform_tensor({1, d}, 1.0, rng);
  p.time_phase = Tensor::zeros({d}, true);
  p.var_embedding = nn::normal_tensor({num_variables, d}, 1.0 / std::sqrt(double(d)), rng);
  return p;
}

void EdgeEmbeddingParams::append_to(nn::NamedParams& out) const {
  nn::append_linear(out, "edge_init.value", value);
  out.emplace_back("edge_init.time_weight", time_weight);
  out.emplace_back("edge_init.time_phase", time_phase);
  out.emplace_back("edge_init.var_embedding", var_embedding);
}

Tensor time_embedding(const Tensor& times, const EdgeEmbeddingParams& p) {
  const std::size_t dim = p.dim();
  std::vector<double> linear_mask(dim, 0.0), periodic_mask(dim, 1.0);
  linear_mask[0] = 1.0;
  periodic_mask[0] = 0.0;
  const Tensor z = d::add(d::matmul(times, p.time_weight), p.time_phase);
  return d::add(d::mul(z, Tensor::from_data({dim}, linear_mask)),
                d::mul(d::sin(z), Tensor::from_data({dim}, periodic_mask)));
}

Tensor init_edge_embeddings(const GraphStep& step, const EdgeEmbeddingParams& p,
                            bool use_time) {
  const std::size_t e = step.num_edges();
  for (std::size_t i = 0; i < e; ++i) {
    if (!std::isfinite(step.value[i])) {
      std::ostringstream msg;
      msg << "non-finite value on edge (patient " << step.patient[i] << ", variable "
          << step.variable[i] << ", step " << step.step << ")";
      throw DataError(msg.str());
    }
  }
  Tensor out = d::add(p.value(Tensor::from_data({e, 1}, step.value)),
                      d::gather_rows(p.var_embedding, step.variable));
  if (use_time)
    out = d::add(out, time_embedding(Tensor::from_data({e, 1}, step.time), p));
  return out;
}

NodeStates init_node_states(std::size_t batch_size, const Tensor& variable_table) {
  const std::size_t dim = variable_table.dim(1);
  return {Tensor::full({batch_size, dim}, 1.0 / std::sqrt(static_cast<double>(dim))),
          variable_table};
}

EdgeSageLayer EdgeSageLayer::create(std::size_t d, Rng& rng) {
  EdgeSageLayer l;
  l.message = nn::make_linear(2 * d, d, rng);
  l.node = nn::make_linear(2 * d, d, rng);
  l.edge = nn::make_linear(3 * d, d, rng);
  return l;
}

void EdgeSageLayer::append_to(nn::NamedParams& out, const std::string& prefix) const {
  nn::append_linear(out, prefix + ".message", message);
  nn::append_linear(out, prefix + ".node", node);
  nn::append_linear(out, prefix + ".edge", edge);
}

LayerOutput message_pass_layer(const GraphStep& step, const NodeStates& states,
                               const Tensor& edges, const EdgeSageLayer& layer) {
  const std::size_t B = states.patients.dim(0);
  const std::size_t V = states.variables.dim(0);
  const std::size_t dim = states.patients.dim(1);
  Tensor to_patients = Tensor::zeros({B, dim});
  Tensor to_variables = Tensor::zeros({V, dim});
  if (!step.empty()) {
    const Tensor var_src = d::gather_rows(states.variables, step.variable);
    const Tensor pat_src = d::gather_rows(states.patients, step.patient);
    const Tensor m_pv = d::relu(layer.message(d::concat({var_src, edges}, 1)));
    const Tensor m_vp = d::relu(layer.message(d::concat({pat_src, edges}, 1)));
    to_patients = d::index_add_rows(m_pv, step.patient, B);
    to_variables = d::index_add_rows(m_vp, step.variable, V);
  }
  NodeStates next{d::relu(layer.node(d::concat({states.patients, to_patients}, 1))),
                  d::relu(layer.node(d::concat({states.variables, to_variables}, 1)))};
  Tensor next_edges = edges;
  if (!step.empty()) {
    const Tensor joint = d::concat({d::gather_rows(next.patients, step.patient),
                                    d::gather_rows(next.variables, step.variable), edges},
                                   1);
    next_edges = d::add(edges, d::relu(layer.edge(joint)));
  }
  return {std::move(next), std::move(next_edges)};
}

LayerOutput message_pass(const GraphStep& step, const NodeStates& states,
                         const Tensor& edges, std::span<const EdgeSageLayer> layers) {
  if (layers.empty()) throw ConfigError("message passing needs at least one layer");
  LayerOutput out{states, edges};
  for (const EdgeSageLayer& layer : layers)
    out = message_pass_layer(step, out.states, out.edges, layer);
  return out;
}

}  // namespace dbgl::graph
