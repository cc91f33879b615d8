#include "metalab/serialization.hpp"

#include <fstream>
#include <stdexcept>

namespace metalab {

namespace {

Json vec_to_json(const Vec& v) {
    Json out = Json::array();
    for (int k = 0; k < v.size(); ++k) out.push_back(v(k));
    return out;
}

Json mat_to_json(const Mat& m) {
    Json out = Json::array();
    for (int r = 0; r < m.rows(); ++r) out.push_back(vec_to_json(m.row(r).transpose()));
    return out;
}

Vec vec_from_json(const Json& j) {
    Vec v(j.size());
    for (size_t k = 0; k < j.size(); ++k) v(static_cast<int>(k)) = j.at(k).get<double>();
    return v;
}

Mat mat_from_json(const Json& j) {
    if (j.empty()) return Mat();
    const int rows = static_cast<int>(j.size());
    const int cols = static_cast<int>(j.at(0).size());
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        if (static_cast<int>(j.at(r).size()) != cols)
            throw std::invalid_argument("json: ragged matrix rows");
        for (int c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
    }
    return m;
}

}  // namespace

Json mdp_to_json(const TabularMdp& mdp) {
    Json j;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    j["discount"] = mdp.discount;
    j["q_max"] = mdp.q_max;
    j["init_dist"] = vec_to_json(mdp.init_dist);
    j["reward"] = mat_to_json(mdp.reward);
    Json transition = Json::array();
    for (int s = 0; s < mdp.n_states; ++s) {
        Json per_state = Json::array();
        for (int a = 0; a < mdp.n_actions; ++a)
            per_state.push_back(vec_to_json(mdp.transition.row(mdp.sa(s, a)).transpose()));
        transition.push_back(per_state);
    }
    j["transition"] = transition;
    return j;
}

TabularMdp mdp_from_json(const Json& j) {
    TabularMdp mdp;
    mdp.n_states = j.at("n_states").get<int>();
    mdp.n_actions = j.at("n_actions").get<int>();
    mdp.discount = j.at("discount").get<double>();
    mdp.q_max = j.value("q_max", 1.0);
    mdp.init_dist = vec_from_json(j.at("init_dist"));
    mdp.reward = mat_from_json(j.at("reward"));
    const Json& transition = j.at("transition");
    mdp.transition.resize(mdp.n_states * mdp.n_actions, mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            mdp.transition.row(mdp.sa(s, a)) = vec_from_json(transition.at(s).at(a)).transpose();
    mdp.validate();
    return mdp;
}

Json net_to_json(const TwoLayerNet& net, const Vec* current) {
    Json j;
    j["m"] = net.width;
    j["d"] = net.input_dim;
    Json b = Json::array();
    for (int r = 0; r < net.width; ++r) b.push_back(net.sign(r));
    j["b"] = b;
    Json w_init = Json::array();
    for (int r = 0; r < net.width; ++r)
        w_init.push_back(vec_to_json(net.w_init.segment(r * net.input_dim, net.input_dim)));
    j["w_init"] = w_init;
    if (current != nullptr) {
        Json w = Json::array();
        for (int r = 0; r < net.width; ++r)
            w.push_back(vec_to_json(current->segment(r * net.input_dim, net.input_dim)));
        j["w"] = w;
    }
    return j;
}

TwoLayerNet net_from_json(const Json& j, Vec* current) {
    if (j.contains("seed")) {
        TwoLayerNet net =
            TwoLayerNet::init_symmetric(j.at("m").get<int>(), j.at("d").get<int>(),
                                        j.at("seed").get<std::uint64_t>());
        if (current != nullptr) *current = net.w_init;
        return net;
    }
    TwoLayerNet net;
    net.width = j.at("m").get<int>();
    net.input_dim = j.at("d").get<int>();
    const Json& w_init = j.at("w_init");
    net.w_init.resize(net.param_dim());
    for (int r = 0; r < net.width; ++r)
        net.w_init.segment(r * net.input_dim, net.input_dim) = vec_from_json(w_init.at(r));
    if (j.contains("b")) {
        for (int r = 0; r < net.width; ++r)
            if (j.at("b").at(r).get<double>() != net.sign(r))
                throw std::invalid_argument("net json: sign pattern must be +1 then -1 halves");
    }
    if (current != nullptr) {
        if (j.contains("w")) {
            current->resize(net.param_dim());
            for (int r = 0; r < net.width; ++r)
                current->segment(r * net.input_dim, net.input_dim) = vec_from_json(j.at("w").at(r));
        } else {
            *current = net.w_init;
        }
    }
    return net;
}

Json rl_task_set_to_json(const MetaRlTaskSet& set) {
    Json j;
    j["tau"] = set.tau;
    j["eta"] = set.eta;
    Json tasks = Json::array();
    for (const auto& task : set.tasks) tasks.push_back(mdp_to_json(task));
    j["tasks"] = tasks;
    if (const auto* linear = dynamic_cast<const LinearEnergy*>(set.energy.get())) {
        j["features"] = mat_to_json(linear->feature_map().table);
    } else if (const auto* neural = dynamic_cast<const NeuralEnergy*>(set.energy.get())) {
        j["embedding"] = mat_to_json(neural->embeddings());
        j["net"] = net_to_json(neural->net());
    } else {
        throw std::invalid_argument("task set json: unknown energy model");
    }
    return j;
}

MetaRlTaskSet rl_task_set_from_json(const Json& j) {
    MetaRlTaskSet set;
    set.tau = j.at("tau").get<double>();
    set.eta = j.at("eta").get<double>();
    for (const auto& task : j.at("tasks")) set.tasks.push_back(mdp_from_json(task));
    if (set.tasks.empty()) throw std::invalid_argument("task set json: no tasks");
    const int S = set.tasks[0].n_states, A = set.tasks[0].n_actions;
    if (j.contains("features")) {
        FeatureMap map;
        map.table = mat_from_json(j.at("features"));
        set.energy = std::make_shared<LinearEnergy>(std::move(map), S, A);
    } else {
        TwoLayerNet net = net_from_json(j.at("net"));
        set.energy =
            std::make_shared<NeuralEnergy>(std::move(net), mat_from_json(j.at("embedding")), S, A);
    }
    set.validate();
    return set;
}

Json sl_task_set_to_json(const SlTaskSet& set) {
    Json j;
    j["eta"] = set.eta;
    j["y_max"] = set.y_max;
    j["domain"] = mat_to_json(set.domain);
    j["marginal"] = vec_to_json(set.marginal);
    Json tasks = Json::array();
    for (const auto& task : set.tasks) {
        Json labels = Json::array();
        for (int x = 0; x < set.domain_size(); ++x) {
            Json entry;
            entry["x_index"] = x;
            entry["values"] = vec_to_json(task.labels[x].values);
            entry["probs"] = vec_to_json(task.labels[x].probs);
            labels.push_back(entry);
        }
        tasks.push_back(Json{{"labels", labels}});
    }
    j["tasks"] = tasks;
    if (const auto* linear = dynamic_cast<const LinearSlModel*>(set.model.get())) {
        j["features"] = mat_to_json(linear->feature_table());
    } else if (const auto* neural = dynamic_cast<const NeuralSlModel*>(set.model.get())) {
        j["net"] = net_to_json(neural->net());
    } else {
        throw std::invalid_argument("sl task set json: unknown hypothesis model");
    }
    return j;
}

SlTaskSet sl_task_set_from_json(const Json& j) {
    SlTaskSet set;
    set.eta = j.at("eta").get<double>();
    set.y_max = j.at("y_max").get<double>();
    set.domain = mat_from_json(j.at("domain"));
    set.marginal = vec_from_json(j.at("marginal"));
    for (const auto& task_json : j.at("tasks")) {
        SlTask task;
        task.labels.resize(set.domain_size());
        std::vector<bool> seen(set.domain_size(), false);
        for (const auto& entry : task_json.at("labels")) {
            const int x = entry.at("x_index").get<int>();
            if (x < 0 || x >= set.domain_size() || seen[x])
                throw std::invalid_argument("sl task set json: bad x_index");
            seen[x] = true;
            task.labels[x].values = vec_from_json(entry.at("values"));
            task.labels[x].probs = vec_from_json(entry.at("probs"));
        }
        for (bool s : seen)
            if (!s) throw std::invalid_argument("sl task set json: missing label set");
        task.cond_mean.resize(set.domain_size());
        for (int x = 0; x < set.domain_size(); ++x)
            task.cond_mean(x) = task.labels[x].values.dot(task.labels[x].probs);
        set.tasks.push_back(std::move(task));
    }
    if (j.contains("features")) {
        set.model = std::make_shared<LinearSlModel>(mat_from_json(j.at("features")));
    } else {
        set.model = std::make_shared<NeuralSlModel>(net_from_json(j.at("net")), set.domain);
    }
    set.validate();
    return set;
}

Json load_json_file(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw std::invalid_argument("cannot open " + path);
    Json j;
    file >> j;
    return j;
}

}  // namespace metalab
