#include "meta/env.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace meta {

namespace {
// Classic cartpole constants.
constexpr double kGravity = 9.8;
constexpr double kCartMass = 1.0;
constexpr double kPoleMass = 0.1;
constexpr double kTotalMass = kCartMass + kPoleMass;
constexpr double kPoleHalfLength = 0.5;
constexpr double kPoleMassLength = kPoleMass * kPoleHalfLength;
constexpr double kForceMag = 10.0;
constexpr double kTau = 0.02;
constexpr double kXLimit = 2.4;
constexpr double kPhiLimit = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;
constexpr int kCartpoleCap = 500;
} // namespace

void GridworldSpec::validate() const {
    if (grid_size < 1) throw std::invalid_argument("GridworldSpec: grid_size must be >= 1");
    if (max_episode_steps < 1) throw std::invalid_argument("GridworldSpec: max_episode_steps must be >= 1");
    std::set<std::pair<int, int>> seen;
    for (const auto& o : objects) {
        if (o.row < 0 || o.row >= grid_size || o.col < 0 || o.col >= grid_size)
            throw std::invalid_argument("GridworldSpec: object outside grid");
        if (!seen.insert({o.row, o.col}).second)
            throw std::invalid_argument("GridworldSpec: duplicate object position");
    }
    if (agent_start) {
        auto [r, c] = *agent_start;
        if (r < 0 || r >= grid_size || c < 0 || c >= grid_size)
            throw std::invalid_argument("GridworldSpec: agent_start outside grid");
    }
}

std::string GridworldSpec::to_text() const {
    std::ostringstream os;
    os << "gridworld " << grid_size << " " << max_episode_steps << "\n";
    if (agent_start)
        os << "start " << agent_start->first << " " << agent_start->second << "\n";
    for (const auto& o : objects)
        os << "object " << o.row << " " << o.col << " " << o.reward << " "
           << (o.terminal ? 1 : 0) << " " << (o.respawn ? 1 : 0) << "\n";
    return os.str();
}

GridworldSpec GridworldSpec::from_text(const std::string& text) {
    GridworldSpec spec;
    std::istringstream is(text);
    std::string line;
    bool header = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "gridworld") {
            ls >> spec.grid_size >> spec.max_episode_steps;
            header = true;
        } else if (tag == "start") {
            int r, c;
            ls >> r >> c;
            spec.agent_start = {r, c};
        } else if (tag == "object") {
            GridObject o;
            int term, resp;
            ls >> o.row >> o.col >> o.reward >> term >> resp;
            o.terminal = term != 0;
            o.respawn = resp != 0;
            spec.objects.push_back(o);
        } else {
            throw std::invalid_argument("GridworldSpec::from_text: unknown tag '" + tag + "'");
        }
        if (ls.fail()) throw std::invalid_argument("GridworldSpec::from_text: malformed line '" + line + "'");
    }
    if (!header) throw std::invalid_argument("GridworldSpec::from_text: missing gridworld header");
    spec.validate();
    return spec;
}

int EnvInstance::observation_size() const {
    if (kind == EnvKind::Cartpole) return 4;
    // agent plane + a plane each for negative- and positive-reward objects
    return 3 * grid.grid_size * grid.grid_size;
}

int EnvInstance::action_count() const {
    return kind == EnvKind::Cartpole ? 2 : 4;
}

int EnvInstance::max_steps() const {
    return kind == EnvKind::Cartpole ? kCartpoleCap : grid.max_episode_steps;
}

EnvDistribution EnvDistribution::grid_id() {
    return EnvDistribution{};
}

EnvDistribution EnvDistribution::grid_ood() {
    EnvDistribution d;
    d.kind = DistKind::GridOod;
    d.size_min = 11;
    d.size_max = 13;
    d.objects_min = 1;
    d.objects_max = 2;
    d.episode_cap = 100;
    return d;
}

EnvDistribution EnvDistribution::cartpole() {
    EnvDistribution d;
    d.kind = DistKind::Cartpole;
    return d;
}

EnvInstance sample_env(const EnvDistribution& dist, RngStream& rng) {
    EnvInstance inst;
    if (dist.kind == DistKind::Cartpole) {
        inst.kind = EnvKind::Cartpole;
        return inst;
    }
    if (dist.size_min < 1 || dist.size_max < dist.size_min || dist.objects_min < 1 ||
        dist.objects_max < dist.objects_min || dist.reward_set.empty())
        throw std::invalid_argument("sample_env: invalid distribution parameters");
    if (dist.objects_max >= dist.size_min * dist.size_min)
        throw std::invalid_argument("sample_env: more objects than free grid cells");

    inst.kind = EnvKind::Gridworld;
    GridworldSpec& g = inst.grid;
    g.grid_size = dist.size_min + static_cast<int>(rng.uniform_int(dist.size_max - dist.size_min + 1));
    g.max_episode_steps = dist.episode_cap;
    const int n_objects =
        dist.objects_min + static_cast<int>(rng.uniform_int(dist.objects_max - dist.objects_min + 1));
    std::set<std::pair<int, int>> used;
    for (int i = 0; i < n_objects; ++i) {
        int r, c;
        do {
            r = static_cast<int>(rng.uniform_int(g.grid_size));
            c = static_cast<int>(rng.uniform_int(g.grid_size));
        } while (!used.insert({r, c}).second);
        GridObject o;
        o.row = r;
        o.col = c;
        o.reward = dist.reward_set[rng.uniform_int(dist.reward_set.size())];
        o.terminal = rng.uniform() < dist.terminal_prob;
        o.respawn = false;
        g.objects.push_back(o);
    }
    g.validate();
    return inst;
}

namespace {

std::vector<double> grid_observation(const EnvInstance& inst, const EnvState& s) {
    const int n = inst.grid.grid_size;
    std::vector<double> obs(3 * n * n, 0.0);
    obs[s.agent_row * n + s.agent_col] = 1.0;
    for (std::size_t i = 0; i < inst.grid.objects.size(); ++i) {
        if (!s.object_alive[i]) continue;
        const auto& o = inst.grid.objects[i];
        const int plane = o.reward < 0 ? 1 : 2;
        obs[plane * n * n + o.row * n + o.col] = 1.0;
    }
    return obs;
}

std::vector<double> cartpole_observation(const EnvState& s) {
    return {s.x, s.x_dot, s.phi, s.phi_dot};
}

} // namespace

std::pair<EnvState, std::vector<double>> env_reset(const EnvInstance& inst, RngStream& rng) {
    EnvState s;
    s.kind = inst.kind;
    s.step_count = 0;
    if (inst.kind == EnvKind::Cartpole) {
        s.x = rng.uniform(-0.05, 0.05);
        s.x_dot = rng.uniform(-0.05, 0.05);
        s.phi = rng.uniform(-0.05, 0.05);
        s.phi_dot = rng.uniform(-0.05, 0.05);
        return {s, cartpole_observation(s)};
    }
    const GridworldSpec& g = inst.grid;
    s.object_alive.assign(g.objects.size(), true);
    if (g.agent_start) {
        s.agent_row = g.agent_start->first;
        s.agent_col = g.agent_start->second;
    } else {
        // random cell not occupied by an object
        while (true) {
            int r = static_cast<int>(rng.uniform_int(g.grid_size));
            int c = static_cast<int>(rng.uniform_int(g.grid_size));
            bool clash = false;
            for (const auto& o : g.objects)
                if (o.row == r && o.col == c) { clash = true; break; }
            if (!clash) {
                s.agent_row = r;
                s.agent_col = c;
                break;
            }
        }
    }
    return {s, grid_observation(inst, s)};
}

StepResult env_step(const EnvInstance& inst, const EnvState& state, int action, RngStream& rng) {
    (void)rng; // dynamics are deterministic; rng reserved for stochastic variants
    StepResult res;
    res.state = state;
    EnvState& s = res.state;

    if (inst.kind == EnvKind::Cartpole) {
        if (action < 0 || action > 1) throw std::invalid_argument("env_step: cartpole action out of range");
        const double force = action == 1 ? kForceMag : -kForceMag;
        const double cos_phi = std::cos(s.phi);
        const double sin_phi = std::sin(s.phi);
        const double temp =
            (force + kPoleMassLength * s.phi_dot * s.phi_dot * sin_phi) / kTotalMass;
        const double phi_acc =
            (kGravity * sin_phi - cos_phi * temp) /
            (kPoleHalfLength * (4.0 / 3.0 - kPoleMass * cos_phi * cos_phi / kTotalMass));
        const double x_acc = temp - kPoleMassLength * phi_acc * cos_phi / kTotalMass;
        s.x += kTau * s.x_dot;
        s.x_dot += kTau * x_acc;
        s.phi += kTau * s.phi_dot;
        s.phi_dot += kTau * phi_acc;
        s.step_count += 1;
        res.reward = 1.0;
        res.done = std::abs(s.x) > kXLimit || std::abs(s.phi) > kPhiLimit ||
                   s.step_count >= kCartpoleCap;
        res.observation = cartpole_observation(s);
        return res;
    }

    if (action < 0 || action > 3) throw std::invalid_argument("env_step: gridworld action out of range");
    static constexpr int dr[4] = {-1, 0, 1, 0}; // N E S W
    static constexpr int dc[4] = {0, 1, 0, -1};
    const GridworldSpec& g = inst.grid;
    int nr = s.agent_row + dr[action];
    int nc = s.agent_col + dc[action];
    if (nr >= 0 && nr < g.grid_size && nc >= 0 && nc < g.grid_size) {
        s.agent_row = nr;
        s.agent_col = nc;
    }
    s.step_count += 1;
    res.reward = 0.0;
    res.done = false;
    for (std::size_t i = 0; i < g.objects.size(); ++i) {
        const auto& o = g.objects[i];
        if (s.object_alive[i] && o.row == s.agent_row && o.col == s.agent_col) {
            res.reward += o.reward;
            if (o.terminal) res.done = true;
            if (!o.respawn) s.object_alive[i] = false;
        }
    }
    if (s.step_count >= g.max_episode_steps) res.done = true;
    res.observation = grid_observation(inst, s);
    return res;
}

} // namespace meta
