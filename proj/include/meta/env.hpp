#pragma once

#include <optional>
#include <string>
#include <vector>

#include "meta/rng.hpp"

namespace meta {

struct GridObject {
    int row = 0;
    int col = 0;
    double reward = 0.0;
    bool terminal = false;
    bool respawn = false;
};

struct GridworldSpec {
    int grid_size = 5;
    std::vector<GridObject> objects;
    int max_episode_steps = 50;
    std::optional<std::pair<int, int>> agent_start; // nullopt = random free cell

    void validate() const;
    std::string to_text() const;
    static GridworldSpec from_text(const std::string& text);
};

enum class EnvKind { Gridworld, Cartpole };

// A concrete environment an agent can be trained on.
struct EnvInstance {
    EnvKind kind = EnvKind::Gridworld;
    GridworldSpec grid;            // valid when kind == Gridworld

    int observation_size() const;
    int action_count() const;
    int max_steps() const;
};

struct EnvState {
    EnvKind kind = EnvKind::Gridworld;
    // gridworld
    int agent_row = 0;
    int agent_col = 0;
    std::vector<bool> object_alive;
    // cartpole
    double x = 0, x_dot = 0, phi = 0, phi_dot = 0;
    int step_count = 0;
};

enum class DistKind { GridId, GridOod, Cartpole };

struct EnvDistribution {
    DistKind kind = DistKind::GridId;
    int size_min = 5, size_max = 9;
    int objects_min = 2, objects_max = 4;
    std::vector<double> reward_set = {-1.0, 1.0};
    int episode_cap = 50;
    double terminal_prob = 0.5;

    static EnvDistribution grid_id();
    static EnvDistribution grid_ood();
    static EnvDistribution cartpole();
};

EnvInstance sample_env(const EnvDistribution& dist, RngStream& rng);

std::pair<EnvState, std::vector<double>> env_reset(const EnvInstance& inst, RngStream& rng);

struct StepResult {
    EnvState state;
    std::vector<double> observation;
    double reward = 0.0;
    bool done = false;
};

StepResult env_step(const EnvInstance& inst, const EnvState& state, int action, RngStream& rng);

} // namespace meta
