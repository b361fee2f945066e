#include "fd/toy.hpp"

#include <cmath>

#include "fd/rng.hpp"

namespace fd::toy {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kExpertGain = 8.0;

double dist(const Vec2& a, const Vec2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

double clamp(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

Vec2 clamp_ws(Vec2 p) { return {clamp(p.x, 0.0, 1.0), clamp(p.y, 0.0, 1.0)}; }

bool in_wall(const ToyTask& t, const Vec2& p) {
    return p.x > t.wall_x_lo && p.x < t.wall_x_hi && p.y > t.wall_y_lo && p.y < t.wall_y_hi;
}

// Axis-sliding wall resolution: drop the axis motions that would end inside
// the block. Step length is below the wall thickness, so endpoint checks are
// enough to prevent crossing.
Vec2 resolve_wall(const ToyTask& t, const Vec2& from, Vec2 cand) {
    if (!in_wall(t, cand)) return cand;
    const Vec2 keep_y{from.x, cand.y};
    const Vec2 keep_x{cand.x, from.y};
    if (!in_wall(t, keep_y)) return keep_y;
    if (!in_wall(t, keep_x)) return keep_x;
    return from;
}

// Liang-Barsky clip: does the open segment a->b pass through the wall block?
bool segment_hits_wall(const ToyTask& t, const Vec2& a, const Vec2& b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    double t0 = 0.0, t1 = 1.0;
    const double p[4] = {-dx, dx, -dy, dy};
    const double q[4] = {a.x - t.wall_x_lo, t.wall_x_hi - a.x, a.y - t.wall_y_lo,
                         t.wall_y_hi - a.y};
    for (int i = 0; i < 4; ++i) {
        if (p[i] == 0.0) {
            if (q[i] < 0.0) return false;  // parallel and outside
        } else {
            const double r = q[i] / p[i];
            if (p[i] < 0.0) {
                if (r > t1) return false;
                if (r > t0) t0 = r;
            } else {
                if (r < t0) return false;
                if (r < t1) t1 = r;
            }
        }
    }
    return t0 < t1;
}

int body_count(TaskKind kind) {
    switch (kind) {
        case TaskKind::Reach: return 0;
        case TaskKind::PushWall:
        case TaskKind::PickPlace2Stage: return 1;
        case TaskKind::StickTool3Stage: return 2;
    }
    return 0;
}

}  // namespace

Tier tier_of(TaskKind kind) {
    switch (kind) {
        case TaskKind::Reach: return Tier::Easy;
        case TaskKind::PushWall: return Tier::Medium;
        case TaskKind::PickPlace2Stage: return Tier::Hard;
        case TaskKind::StickTool3Stage: return Tier::VeryHard;
    }
    return Tier::Easy;
}

int action_dim_of(TaskKind kind) { return kind == TaskKind::Reach ? 2 : 3; }

TaskKind task_from_string(const std::string& s) {
    if (s == "reach") return TaskKind::Reach;
    if (s == "push-wall") return TaskKind::PushWall;
    if (s == "pick-place-2") return TaskKind::PickPlace2Stage;
    if (s == "stick-tool-3") return TaskKind::StickTool3Stage;
    raise("unknown task '" + s + "' (want reach|push-wall|pick-place-2|stick-tool-3)");
}

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::Reach: return "reach";
        case TaskKind::PushWall: return "push-wall";
        case TaskKind::PickPlace2Stage: return "pick-place-2";
        case TaskKind::StickTool3Stage: return "stick-tool-3";
    }
    return "?";
}

ToyTask ToyTask::make(TaskKind kind) {
    ToyTask t;
    t.kind = kind;
    switch (kind) {
        case TaskKind::Reach: t.max_steps = 60; break;
        case TaskKind::PushWall: t.max_steps = 140; break;
        case TaskKind::PickPlace2Stage: t.max_steps = 120; break;
        case TaskKind::StickTool3Stage: t.max_steps = 160; break;
    }
    return t;
}

// ---------------------------------------------------------------------------
// Reset
// ---------------------------------------------------------------------------

std::pair<EnvState, perception::Observation> reset(const ToyTask& task, uint64_t seed) {
    Rng rng(mix_seed(seed, static_cast<uint64_t>(task.kind) + 101));
    EnvState s;
    s.kind = task.kind;
    const int nb = body_count(task.kind);
    s.bodies.resize(static_cast<size_t>(nb));
    s.attached.assign(static_cast<size_t>(nb), 0);
    s.offsets.resize(static_cast<size_t>(nb));
    auto draw = [&](double xl, double xh, double yl, double yh) {
        return Vec2{rng.uniform(xl, xh), rng.uniform(yl, yh)};
    };
    switch (task.kind) {
        case TaskKind::Reach: {
            s.agent = draw(0.1, 0.9, 0.1, 0.9);
            do {
                s.goal = draw(0.1, 0.9, 0.1, 0.9);
            } while (dist(s.agent, s.goal) < 0.3);
            break;
        }
        case TaskKind::PushWall: {
            s.agent = draw(0.08, 0.30, 0.10, 0.90);
            do {
                s.bodies[0] = draw(0.15, 0.38, 0.25, 0.75);
            } while (dist(s.agent, s.bodies[0]) < 0.12);
            s.goal = draw(0.62, 0.85, 0.25, 0.75);
            break;
        }
        case TaskKind::PickPlace2Stage: {
            s.agent = draw(0.10, 0.90, 0.10, 0.90);
            do {
                s.bodies[0] = draw(0.15, 0.85, 0.15, 0.85);
            } while (dist(s.agent, s.bodies[0]) < 0.15);
            do {
                s.goal = draw(0.15, 0.85, 0.15, 0.85);
            } while (dist(s.bodies[0], s.goal) < 0.3);
            break;
        }
        case TaskKind::StickTool3Stage: {
            s.agent = draw(0.10, 0.90, 0.08, 0.28);
            s.bodies[0] = draw(0.20, 0.80, 0.32, 0.48);  // stick
            s.bodies[1] = draw(0.20, 0.80, 0.58, 0.82);  // target object
            do {
                s.goal = draw(0.12, 0.88, 0.12, 0.28);
            } while (dist(s.bodies[1], s.goal) < 0.3);
            break;
        }
    }
    return {s, render_observation(task, s)};
}

// ---------------------------------------------------------------------------
// Step
// ---------------------------------------------------------------------------

namespace {

bool success_predicate(const ToyTask& task, const EnvState& s) {
    switch (task.kind) {
        case TaskKind::Reach: return dist(s.agent, s.goal) <= task.tol;
        case TaskKind::PushWall: return dist(s.bodies[0], s.goal) <= task.tol;
        case TaskKind::PickPlace2Stage:
            return dist(s.bodies[0], s.goal) <= task.tol && !s.attached[0];
        case TaskKind::StickTool3Stage: return dist(s.bodies[1], s.goal) <= task.tol;
    }
    return false;
}

}  // namespace

StepResult step(const ToyTask& task, const EnvState& state, const Array& action) {
    const int adim = action_dim_of(task.kind);
    if (action.numel() < adim)
        raise("step: action needs " + std::to_string(adim) + " channels");
    if (!action.all_finite()) raise("step: non-finite action");

    EnvState s = state;
    const double vx = clamp(action[0], -1.0, 1.0);
    const double vy = clamp(action[1], -1.0, 1.0);
    const double grasp = adim >= 3 ? clamp(action[2], -1.0, 1.0) : 0.0;

    const Vec2 old = s.agent;
    Vec2 cand = clamp_ws({old.x + vx * task.dt, old.y + vy * task.dt});
    if (task.kind == TaskKind::PushWall) cand = resolve_wall(task, old, cand);
    s.agent = cand;
    s.vel = {(cand.x - old.x) / task.dt, (cand.y - old.y) / task.dt};

    // Attached bodies follow their anchor; a chained body follows the chain.
    if (!s.bodies.empty() && s.attached[0])
        s.bodies[0] = clamp_ws({s.agent.x + s.offsets[0].x, s.agent.y + s.offsets[0].y});
    if (s.bodies.size() > 1 && s.attached[1])
        s.bodies[1] = clamp_ws({s.bodies[0].x + s.offsets[1].x, s.bodies[0].y + s.offsets[1].y});

    // Attachment rules, evaluated on post-move positions.
    switch (task.kind) {
        case TaskKind::Reach:
            break;
        case TaskKind::PushWall:
        case TaskKind::PickPlace2Stage: {
            if (!s.attached[0] && grasp > 0.5 && dist(s.agent, s.bodies[0]) <= task.grasp_radius) {
                s.attached[0] = 1;
                s.offsets[0] = {s.bodies[0].x - s.agent.x, s.bodies[0].y - s.agent.y};
                s.stage = std::max(s.stage, 1);
            } else if (s.attached[0] && grasp <= 0.5) {
                s.attached[0] = 0;
                if (task.kind == TaskKind::PickPlace2Stage) s.stage = std::max(s.stage, 2);
            }
            break;
        }
        case TaskKind::StickTool3Stage: {
            // The grasp channel binds the stick only; the target object
            // latches onto the held stick tip on contact.
            if (!s.attached[0] && grasp > 0.5 && dist(s.agent, s.bodies[0]) <= task.grasp_radius) {
                s.attached[0] = 1;
                s.offsets[0] = {s.bodies[0].x - s.agent.x, s.bodies[0].y - s.agent.y};
                s.stage = std::max(s.stage, 1);
            } else if (s.attached[0] && grasp <= 0.5) {
                s.attached[0] = 0;
            }
            if (!s.attached[1] && s.attached[0] &&
                dist(s.bodies[0], s.bodies[1]) <= task.attach_radius) {
                s.attached[1] = 1;
                s.offsets[1] = {s.bodies[1].x - s.bodies[0].x, s.bodies[1].y - s.bodies[0].y};
                s.stage = std::max(s.stage, 2);
            }
            break;
        }
    }

    s.step_idx += 1;
    if (!s.success && success_predicate(task, s)) s.success = true;
    const bool done = s.success || s.step_idx >= task.max_steps;

    StepResult res;
    res.obs = render_observation(task, s);
    res.done = done;
    res.success = s.success;
    res.state = std::move(s);
    return res;
}

// ---------------------------------------------------------------------------
// Observation rendering: fixed arc-length boundary samples per body, z = 0.
// ---------------------------------------------------------------------------

namespace {

constexpr double kObjectRadius = 0.04;
constexpr double kStickRadius = 0.03;

void emit_circle(Array& pts, int& row, const Vec2& c, double radius, int count) {
    for (int i = 0; i < count; ++i) {
        const double a = kTwoPi * i / count;
        pts.at2(row, 0) = c.x + radius * std::cos(a);
        pts.at2(row, 1) = c.y + radius * std::sin(a);
        pts.at2(row, 2) = 0.0;
        ++row;
    }
}

void emit_rect(Array& pts, int& row, double xl, double xh, double yl, double yh, int count) {
    const double w = xh - xl, h = yh - yl;
    const double per = 2.0 * (w + h);
    for (int i = 0; i < count; ++i) {
        double d = per * i / count;
        double x, y;
        if (d < w) {
            x = xl + d;
            y = yl;
        } else if (d < w + h) {
            x = xh;
            y = yl + (d - w);
        } else if (d < 2 * w + h) {
            x = xh - (d - w - h);
            y = yh;
        } else {
            x = xl;
            y = yh - (d - 2 * w - h);
        }
        pts.at2(row, 0) = x;
        pts.at2(row, 1) = y;
        pts.at2(row, 2) = 0.0;
        ++row;
    }
}

}  // namespace

perception::Observation render_observation(const ToyTask& task, const EnvState& s) {
    // Coordinates are reported relative to the workspace centre.
    constexpr double kCenter = 0.5;
    Array pts({kPointCount, 3});
    int row = 0;
    switch (task.kind) {
        case TaskKind::Reach:
            emit_circle(pts, row, s.goal, task.tol, 64);
            break;
        case TaskKind::PushWall:
            emit_circle(pts, row, s.bodies[0], kObjectRadius, 24);
            emit_rect(pts, row, task.wall_x_lo, task.wall_x_hi, task.wall_y_lo, task.wall_y_hi, 24);
            emit_circle(pts, row, s.goal, task.tol, 16);
            break;
        case TaskKind::PickPlace2Stage:
            emit_circle(pts, row, s.bodies[0], kObjectRadius, 32);
            emit_circle(pts, row, s.goal, task.tol, 32);
            break;
        case TaskKind::StickTool3Stage:
            emit_circle(pts, row, s.bodies[0], kStickRadius, 22);
            emit_circle(pts, row, s.bodies[1], kObjectRadius, 22);
            emit_circle(pts, row, s.goal, task.tol, 20);
            break;
    }
    if (row != kPointCount) raise("render_observation: point allocation does not sum to 64");
    for (int i = 0; i < kPointCount; ++i) {
        pts.at2(i, 0) -= kCenter;
        pts.at2(i, 1) -= kCenter;
    }
    Array prop({kProprioDim},
               {s.agent.x - kCenter, s.agent.y - kCenter, s.vel.x, s.vel.y,
                s.attached.empty() ? 0.0 : static_cast<double>(s.attached[0])});
    return perception::Observation{std::move(pts), std::move(prop)};
}

// ---------------------------------------------------------------------------
// Scripted experts: stage-indexed proportional controllers.
// ---------------------------------------------------------------------------

namespace {

Vec2 toward(const Vec2& from, const Vec2& to) {
    Vec2 a{(to.x - from.x) * kExpertGain, (to.y - from.y) * kExpertGain};
    const double n = std::hypot(a.x, a.y);
    if (n > 1.0) {
        a.x /= n;
        a.y /= n;
    }
    return a;
}

// Predicts the post-move agent position for a velocity command, so the grasp
// channel can be raised exactly on the attaching step.
Vec2 predict_move(const ToyTask& task, const EnvState& s, const Vec2& v) {
    Vec2 cand = clamp_ws({s.agent.x + clamp(v.x, -1, 1) * task.dt,
                          s.agent.y + clamp(v.y, -1, 1) * task.dt});
    if (task.kind == TaskKind::PushWall) cand = resolve_wall(task, s.agent, cand);
    return cand;
}

Array pack2(const Vec2& v) { return Array({2}, {v.x, v.y}); }
Array pack3(const Vec2& v, double g) { return Array({3}, {v.x, v.y, g}); }

// Approach-and-grasp helper shared by every grasping task. The grasp fires
// well inside the radius so carry offsets stay small.
Array approach_grasp(const ToyTask& task, const EnvState& s, const Vec2& body) {
    const Vec2 v = toward(s.agent, body);
    const Vec2 next = predict_move(task, s, v);
    const double g = dist(next, body) <= task.grasp_radius * 0.6 ? 1.0 : 0.0;
    return pack3(v, g);
}

Array expert_push_wall(const ToyTask& task, const EnvState& s) {
    if (!s.attached[0]) return approach_grasp(task, s, s.bodies[0]);
    const Vec2 carry_target{s.goal.x - s.offsets[0].x, s.goal.y - s.offsets[0].y};
    if (segment_hits_wall(task, s.agent, carry_target)) {
        // Route through the nearer wall gap, then cross.
        const double gap_y = s.agent.y >= 0.5 ? task.wall_y_hi + 0.08 : task.wall_y_lo - 0.08;
        if (std::abs(s.agent.y - gap_y) > 0.05)
            return pack3(toward(s.agent, Vec2{s.agent.x, gap_y}), 1.0);
        const double cross_x =
            carry_target.x > s.agent.x ? task.wall_x_hi + 0.08 : task.wall_x_lo - 0.08;
        return pack3(toward(s.agent, Vec2{cross_x, gap_y}), 1.0);
    }
    return pack3(toward(s.agent, carry_target), 1.0);
}

Array expert_pick_place(const ToyTask& task, const EnvState& s) {
    if (s.attached[0]) {
        if (dist(s.bodies[0], s.goal) <= 0.6 * task.tol) return pack3(Vec2{}, 0.0);  // place
        return pack3(toward(s.agent, Vec2{s.goal.x - s.offsets[0].x, s.goal.y - s.offsets[0].y}),
                     1.0);
    }
    if (dist(s.bodies[0], s.goal) <= task.tol) return pack3(Vec2{}, 0.0);  // placed, hold still
    return approach_grasp(task, s, s.bodies[0]);
}

Array expert_stick_tool(const ToyTask& task, const EnvState& s) {
    if (!s.attached[0]) return approach_grasp(task, s, s.bodies[0]);
    if (!s.attached[1]) {
        // Bring the stick tip onto the object.
        const Vec2 target{s.bodies[1].x - s.offsets[0].x, s.bodies[1].y - s.offsets[0].y};
        return pack3(toward(s.agent, target), 1.0);
    }
    const Vec2 target{s.goal.x - s.offsets[0].x - s.offsets[1].x,
                      s.goal.y - s.offsets[0].y - s.offsets[1].y};
    return pack3(toward(s.agent, target), 1.0);
}

}  // namespace

Array scripted_expert(const ToyTask& task, const EnvState& s) {
    switch (task.kind) {
        case TaskKind::Reach: return pack2(toward(s.agent, s.goal));
        case TaskKind::PushWall: return expert_push_wall(task, s);
        case TaskKind::PickPlace2Stage: return expert_pick_place(task, s);
        case TaskKind::StickTool3Stage: return expert_stick_tool(task, s);
    }
    raise("scripted_expert: unknown task");
}

}  // namespace fd::toy
