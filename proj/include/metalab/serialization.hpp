#pragma once

#include <json.hpp>
#include <string>

#include "metalab/meta_rl.hpp"
#include "metalab/meta_sl.hpp"
#include "metalab/neural_net.hpp"

namespace metalab {

using Json = nlohmann::json;

/// Row-major JSON document:
/// {n_states, n_actions, discount, init_dist: [...], reward: [[...]],
///  transition: [[[...]]], q_max}.
Json mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const Json& j);

/// Either {m, d, seed} (reconstruction from the seed) or explicit
/// {b: [...], w: [[...]], w_init: [[...]]} blocks. The optional current
/// parameter carries w when it differs from the initialization.
Json net_to_json(const TwoLayerNet& net, const Vec* current = nullptr);
TwoLayerNet net_from_json(const Json& j, Vec* current = nullptr);

Json rl_task_set_to_json(const MetaRlTaskSet& set);
MetaRlTaskSet rl_task_set_from_json(const Json& j);

/// {domain: [[...]], marginal: [...],
///  tasks: [{labels: [{x_index, values: [...], probs: [...]}]}],
///  features: [[...]], eta, y_max} with an optional net for neural models.
Json sl_task_set_to_json(const SlTaskSet& set);
SlTaskSet sl_task_set_from_json(const Json& j);

Json load_json_file(const std::string& path);

}  // namespace metalab
