// Deterministic 2D manipulation tasks with point-cloud observations and
// scripted experts. Dynamics are kinematic: Euler integration plus sticky
// attachment; nothing else.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fd/array.hpp"
#include "fd/perception.hpp"

namespace fd::toy {

enum class TaskKind { Reach, PushWall, PickPlace2Stage, StickTool3Stage };
enum class Tier { Easy, Medium, Hard, VeryHard };

Tier tier_of(TaskKind kind);
int action_dim_of(TaskKind kind);
TaskKind task_from_string(const std::string& s);
std::string to_string(TaskKind kind);

struct Vec2 {
    double x = 0.0, y = 0.0;
};

// Per-task constants. All tasks share the unit workspace and dt.
struct ToyTask {
    TaskKind kind = TaskKind::Reach;
    double dt = 0.05;             // s
    double tol = 0.05;            // success radius, m
    double grasp_radius = 0.08;   // agent-to-body attach distance
    double attach_radius = 0.06;  // stick-tip-to-object attach distance
    int max_steps = 60;
    // wall block (PushWall only)
    double wall_x_lo = 0.47, wall_x_hi = 0.53;
    double wall_y_lo = 0.20, wall_y_hi = 0.80;

    static ToyTask make(TaskKind kind);
};

inline constexpr int kPointCount = 64;
inline constexpr int kProprioDim = 5;  // agent x, y, vx, vy, grasp

struct EnvState {
    TaskKind kind = TaskKind::Reach;
    Vec2 agent, vel;
    Vec2 goal;
    std::vector<Vec2> bodies;        // Reach: none; PushWall/PickPlace: {object};
                                     // StickTool: {stick, object}
    std::vector<uint8_t> attached;   // parallel to bodies
    std::vector<Vec2> offsets;       // attach offsets (body = anchor + offset)
    int stage = 0;
    int step_idx = 0;
    bool success = false;
};

struct StepResult {
    EnvState state;
    perception::Observation obs;
    bool done = false;
    bool success = false;
};

std::pair<EnvState, perception::Observation> reset(const ToyTask& task, uint64_t seed);
StepResult step(const ToyTask& task, const EnvState& state, const Array& action);
perception::Observation render_observation(const ToyTask& task, const EnvState& state);
Array scripted_expert(const ToyTask& task, const EnvState& state);

}  // namespace fd::toy
