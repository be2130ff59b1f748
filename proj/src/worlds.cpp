#include "svp/worlds.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "svp/imageio.hpp"

namespace svp {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

// ---------------------------------------------------------------------------
// sprites
// ---------------------------------------------------------------------------

namespace {

struct Sprite {
    double x, y;  // center
    double vx, vy;
    double size;
    double bright;
    int shape;  // 0 disc, 1 square, 2 diamond
};

double sprite_intensity(const Sprite& s, double px, double py) {
    double dx = px - s.x, dy = py - s.y;
    double half = s.size / 2.0;
    double d;
    switch (s.shape) {
        case 0: d = std::sqrt(dx * dx + dy * dy); break;
        case 1: d = std::max(std::abs(dx), std::abs(dy)); break;
        default: d = 0.75 * (std::abs(dx) + std::abs(dy)); break;
    }
    // 1px soft edge keeps the frames usable for flow learning
    return s.bright * std::clamp(half + 0.5 - d, 0.0, 1.0);
}

void bounce_resample(Sprite& s, double nx, double ny, RngStream& rng,
                     const SpriteWorldConfig& cfg) {
    // direction uniform on the half-circle around the inward normal
    double base = std::atan2(ny, nx);
    double phi = base + rng.uniform(-kPi / 2, kPi / 2);
    double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
    s.vx = speed * std::cos(phi);
    s.vy = speed * std::sin(phi);
}

}  // namespace

LabeledSequence gen_sprites(const SpriteWorldConfig& cfg, uint64_t seed) {
    check(cfg.sprite_count >= 1, "gen_sprites: sprite_count >= 1 required");
    check(cfg.sprite_size + 1 < std::min(cfg.height, cfg.width),
          "gen_sprites: sprites must fit within the grid");
    RngStream rng(seed, "world.sprites");
    double mx = cfg.sprite_size / 2.0 + 0.5;

    std::vector<Sprite> sprites;
    for (int i = 0; i < cfg.sprite_count; ++i) {
        Sprite s;
        s.x = rng.uniform(mx, cfg.width - 1 - mx);
        s.y = rng.uniform(mx, cfg.height - 1 - mx);
        double phi = rng.uniform(0, 2 * kPi);
        double speed = rng.uniform(cfg.speed_min, cfg.speed_max);
        s.vx = speed * std::cos(phi);
        s.vy = speed * std::sin(phi);
        s.size = cfg.sprite_size;
        s.bright = rng.uniform(0.7, 1.0);
        s.shape = static_cast<int>(rng.uniform_int(0, 2));
        sprites.push_back(s);
    }

    LabeledSequence seq;
    for (int64_t t = 0; t < cfg.t; ++t) {
        Tensor frame({1, cfg.height, cfg.width});
        double* p = frame.data();
        for (int64_t y = 0; y < cfg.height; ++y)
            for (int64_t x = 0; x < cfg.width; ++x) {
                double v = 0.0;
                for (const auto& s : sprites)
                    v = std::max(v, sprite_intensity(s, double(x), double(y)));
                p[y * cfg.width + x] = v;
            }
        seq.frames.push_back(std::move(frame));

        for (auto& s : sprites) {
            s.x += s.vx;
            s.y += s.vy;
            if (s.x < mx) {
                s.x = mx;
                bounce_resample(s, 1, 0, rng, cfg);
            } else if (s.x > cfg.width - 1 - mx) {
                s.x = cfg.width - 1 - mx;
                bounce_resample(s, -1, 0, rng, cfg);
            }
            if (s.y < mx) {
                s.y = mx;
                bounce_resample(s, 0, 1, rng, cfg);
            } else if (s.y > cfg.height - 1 - mx) {
                s.y = cfg.height - 1 - mx;
                bounce_resample(s, 0, -1, rng, cfg);
            }
        }
    }
    return seq;
}

// ---------------------------------------------------------------------------
// ego-motion world
// ---------------------------------------------------------------------------

CameraIntrinsics egoworld_intrinsics(const EgoWorldConfig& cfg) {
    return {cfg.fx, cfg.fy, (cfg.width - 1) / 2.0, (cfg.height - 1) / 2.0};
}

namespace {

struct EgoScene {
    double speed, yaw_rate, box_vx;
    double box_x0, box_y_top;
    double gp[4];  // texture phases
    double cam_z = 0, cam_x = 0, yaw = 0;
    const EgoWorldConfig* cfg;

    double ground_tex(double x, double z) const {
        return 0.55 + 0.18 * std::sin(0.4 * x + gp[0]) +
               0.17 * std::cos(0.33 * z + gp[1]) + 0.06 * std::sin(0.21 * (x + z));
    }
    double wall_tex(double x, double y) const {
        return 0.5 + 0.2 * std::sin(0.35 * x + gp[2]) +
               0.15 * std::cos(0.45 * y + gp[3]) + 0.08 * std::sin(0.18 * (x - y));
    }
    double box_tex(double u, double v) const {
        return 0.82 + 0.14 * std::sin(2.2 * u + 1.3 * v) + 0.04 * std::cos(3.1 * v);
    }

    double box_x(int64_t t) const { return box_x0 + box_vx * t; }

    struct Hit {
        int kind;  // 0 ground, 1 wall, 2 box
        double s;  // ray parameter == camera-frame depth
        double wx, wy, wz;
    };

    Hit raycast(int64_t t, double u, double v, const CameraIntrinsics& K) const {
        double dx = (u - K.cx) / K.fx, dy = (v - K.cy) / K.fy;
        // yaw about the y (down) axis; camera ray into world space
        double c = std::cos(yaw), s = std::sin(yaw);
        double wx = c * dx + s;
        double wy = dy;
        double wz = -s * dx + c;

        double s_ground = wy > 1e-9 ? cfg->cam_height / wy : 1e18;
        double s_wall = wz > 1e-9 ? (cfg->wall_z - cam_z) / wz : 1e18;
        double s_bg = std::min(s_ground, s_wall);

        double s_box = wz > 1e-9 ? (cfg->box_z - cam_z) / wz : 1e18;
        if (s_box > 0 && s_box < s_bg) {
            double px = cam_x + s_box * wx;
            double py = s_box * wy;
            double bx = box_x(t);
            if (px >= bx && px <= bx + cfg->box_size && py >= box_y_top &&
                py <= box_y_top + cfg->box_size)
                return {2, s_box, px, py, cfg->box_z};
        }
        if (s_ground <= s_wall)
            return {0, s_ground, cam_x + s_ground * wx, cfg->cam_height,
                    cam_z + s_ground * wz};
        return {1, s_wall, cam_x + s_wall * wx, s_wall * wy, cfg->wall_z};
    }

    double shade(const Hit& h, int64_t t) const {
        switch (h.kind) {
            case 0: return ground_tex(h.wx, h.wz);
            case 1: return wall_tex(h.wx, h.wy);
            default: return box_tex(h.wx - box_x(t), h.wy - box_y_top);
        }
    }

    void project(double wx, double wy, double wz, double cx_p, double cz_p,
                 double yaw_p, const CameraIntrinsics& K, double& u,
                 double& v) const {
        double px = wx - cx_p, py = wy, pz = wz - cz_p;
        double c = std::cos(yaw_p), s = std::sin(yaw_p);
        double xc = c * px - s * pz;
        double zc = s * px + c * pz;
        u = K.fx * xc / zc + K.cx;
        v = K.fy * py / zc + K.cy;
    }
};

}  // namespace

LabeledSequence gen_egoworld(const EgoWorldConfig& cfg, uint64_t seed) {
    RngStream rng(seed, "world.ego");
    CameraIntrinsics K = egoworld_intrinsics(cfg);

    EgoScene sc;
    sc.cfg = &cfg;
    sc.speed = rng.uniform(cfg.ego_speed_min, cfg.ego_speed_max);
    sc.yaw_rate = rng.uniform(-cfg.ego_yaw_max, cfg.ego_yaw_max);
    sc.box_vx = (rng.uniform(0, 1) < 0.5 ? -1 : 1) *
                rng.uniform(cfg.box_speed_min, cfg.box_speed_max);
    sc.box_x0 = rng.uniform(-2.0, 2.0 - cfg.box_size);
    sc.box_y_top = cfg.cam_height - cfg.box_size;  // box rests on the ground
    for (int i = 0; i < 4; ++i) sc.gp[i] = rng.uniform(0, 2 * kPi);

    int64_t H = cfg.height, W = cfg.width;
    LabeledSequence seq;

    double prev_cam_x = 0, prev_cam_z = 0, prev_yaw = 0;
    for (int64_t t = 0; t < cfg.t; ++t) {
        Tensor frame({1, H, W}), depth({1, H, W}), fg({1, H, W});
        Tensor rflow({2, H, W});
        std::vector<EgoScene::Hit> hits(H * W);
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                auto h = sc.raycast(t, double(x), double(y), K);
                hits[y * W + x] = h;
                frame.data()[y * W + x] = std::clamp(sc.shade(h, t), 0.0, 1.0);
                depth.data()[y * W + x] = std::clamp(h.s, cfg.d_min, cfg.d_max);
                fg.data()[y * W + x] = h.kind == 2 ? 1.0 : 0.0;
            }

        Tensor pose({6});
        if (t > 0) {
            // target camera coordinates -> previous camera coordinates
            pose.data()[1] = sc.yaw_rate;
            pose.data()[5] = sc.speed;

            // residual flow: true backward flow of the moving box minus the
            // rigid flow induced by depth+pose, on box pixels only
            PoseSE3 pr = PoseSE3::from_tensor(pose);
            auto R = rodrigues(pr.rotation);
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    const auto& h = hits[y * W + x];
                    if (h.kind != 2) continue;
                    double u_true, v_true;
                    sc.project(h.wx - sc.box_vx, h.wy, h.wz, prev_cam_x, prev_cam_z,
                               prev_yaw, K, u_true, v_true);
                    double d = h.s;
                    double Xc = (x - K.cx) / K.fx * d, Yc = (y - K.cy) / K.fy * d;
                    double Xp = R[0] * Xc + R[1] * Yc + R[2] * d + pr.translation[0];
                    double Yp = R[3] * Xc + R[4] * Yc + R[5] * d + pr.translation[1];
                    double Zp = R[6] * Xc + R[7] * Yc + R[8] * d + pr.translation[2];
                    double u_rig = K.fx * Xp / Zp + K.cx;
                    double v_rig = K.fy * Yp / Zp + K.cy;
                    rflow.data()[y * W + x] = u_true - u_rig;
                    rflow.data()[H * W + y * W + x] = v_true - v_rig;
                }
        }

        seq.frames.push_back(std::move(frame));
        seq.depth.push_back(std::move(depth));
        seq.fg_mask.push_back(std::move(fg));
        seq.poses.push_back(std::move(pose));
        seq.residual_flow.push_back(std::move(rflow));

        prev_cam_x = sc.cam_x;
        prev_cam_z = sc.cam_z;
        prev_yaw = sc.yaw;
        sc.cam_x += sc.speed * std::sin(sc.yaw);
        sc.cam_z += sc.speed * std::cos(sc.yaw);
        sc.yaw += sc.yaw_rate;
    }
    return seq;
}

// ---------------------------------------------------------------------------
// BEV grid world
// ---------------------------------------------------------------------------

namespace {

struct Agent {
    int64_t x, y;  // top-left cell
    int side;
    int heading;  // 0:+x 1:+y 2:-x 3:-y
    int speed;
    double cx() const { return x + (side - 1) / 2.0; }
    double cy() const { return y + (side - 1) / 2.0; }
    bool overlaps(const Agent& o) const {
        return x < o.x + o.side && o.x < x + side && y < o.y + o.side &&
               o.y < y + side;
    }
};

const int kDx[4] = {1, 0, -1, 0};
const int kDy[4] = {0, 1, 0, -1};

}  // namespace

LabeledSequence gen_bevworld(const BEVWorldConfig& cfg, uint64_t seed) {
    check(cfg.agent_size_min >= 1 && cfg.agent_size_max < cfg.grid / 2,
          "gen_bevworld: agent sizes out of range");
    RngStream rng(seed, "world.bev");
    int64_t G = cfg.grid;

    std::vector<Agent> agents;
    for (int i = 0; i < cfg.agent_count; ++i) {
        Agent a;
        a.side = static_cast<int>(rng.uniform_int(cfg.agent_size_min / 2,
                                                  cfg.agent_size_max / 2)) *
                     2 +
                 1;  // odd side, integer centroid
        a.heading = static_cast<int>(rng.uniform_int(0, 3));
        a.speed = static_cast<int>(rng.uniform_int(1, cfg.speed_max));
        a.x = 0;
        a.y = 0;
        for (int attempt = 0; attempt < 200; ++attempt) {
            a.x = rng.uniform_int(0, G - a.side);
            a.y = rng.uniform_int(0, G - a.side);
            bool clash = false;
            for (const auto& o : agents) clash = clash || a.overlaps(o);
            if (!clash) break;
        }
        agents.push_back(a);
    }

    double rmax = std::sqrt(2.0) * (G - 1) / 2.0;
    double gc = (G - 1) / 2.0;

    std::vector<std::vector<Agent>> timeline;
    for (int64_t t = 0; t < cfg.t; ++t) {
        timeline.push_back(agents);
        for (size_t i = 0; i < agents.size(); ++i) {
            Agent& a = agents[i];
            if (rng.uniform(0, 1) < cfg.turn_prob)
                a.heading = (a.heading + (rng.uniform(0, 1) < 0.5 ? 1 : 3)) % 4;
            Agent prop = a;
            prop.x += kDx[a.heading] * a.speed;
            prop.y += kDy[a.heading] * a.speed;
            bool blocked = prop.x < 0 || prop.y < 0 || prop.x > G - a.side ||
                           prop.y > G - a.side;
            for (size_t j = 0; j < agents.size() && !blocked; ++j)
                blocked = j != i && prop.overlaps(agents[j]);
            if (blocked)
                a.heading = (a.heading + 2) % 4;
            else {
                a.x = prop.x;
                a.y = prop.y;
            }
        }
    }

    LabeledSequence seq;
    for (int64_t t = 0; t < cfg.t; ++t) {
        const auto& now = timeline[t];
        Tensor state({8, G, G}), seg({1, G, G}), ids({1, G, G});
        Tensor centers({1, G, G}), offsets({2, G, G}), flow({2, G, G});

        for (size_t i = 0; i < now.size(); ++i) {
            const Agent& a = now[i];
            for (int64_t y = a.y; y < a.y + a.side; ++y)
                for (int64_t x = a.x; x < a.x + a.side; ++x) {
                    int64_t p = y * G + x;
                    seg.data()[p] = 1.0;
                    ids.data()[p] = double(i + 1);
                    state.data()[p] = 1.0;                            // occupancy
                    state.data()[(1 + a.heading) * G * G + p] = 1.0;  // heading
                    state.data()[5 * G * G + p] = double(a.speed) / cfg.speed_max;
                    state.data()[6 * G * G + p] = (a.cx() - x) / a.side + 0.5;
                    state.data()[7 * G * G + p] = (a.cy() - y) / a.side + 0.5;
                    offsets.data()[p] = a.cx() - x;
                    offsets.data()[G * G + p] = a.cy() - y;
                    if (t + 1 < cfg.t) {
                        const Agent& nx = timeline[t + 1][i];
                        flow.data()[p] = nx.cx() - a.cx();
                        flow.data()[G * G + p] = nx.cy() - a.cy();
                    }
                }
            for (int64_t y = 0; y < G; ++y)
                for (int64_t x = 0; x < G; ++x) {
                    double d2 =
                        (x - a.cx()) * (x - a.cx()) + (y - a.cy()) * (y - a.cy());
                    double v = std::exp(-d2 / (2 * cfg.center_sigma * cfg.center_sigma));
                    int64_t p = y * G + x;
                    centers.data()[p] = std::max(centers.data()[p], v);
                }
        }

        // distance-dependent degradation of the state (labels stay exact):
        // far cells are attenuated and noisy, like weak far-range sensing
        for (int64_t c = 0; c < 8; ++c)
            for (int64_t y = 0; y < G; ++y)
                for (int64_t x = 0; x < G; ++x) {
                    double r = std::sqrt((x - gc) * (x - gc) + (y - gc) * (y - gc)) / rmax;
                    int64_t p = c * G * G + y * G + x;
                    double v = state.data()[p] * (1.0 - cfg.state_atten * r);
                    v += cfg.state_noise * r * rng.normal();
                    state.data()[p] = std::clamp(v, 0.0, 1.0);
                }

        seq.frames.push_back(std::move(state));
        seq.seg.push_back(std::move(seg));
        seq.instance_ids.push_back(std::move(ids));
        seq.centers.push_back(std::move(centers));
        seq.offsets.push_back(std::move(offsets));
        seq.future_flow.push_back(std::move(flow));
    }
    return seq;
}

// ---------------------------------------------------------------------------
// dataset io
// ---------------------------------------------------------------------------

std::vector<std::string> world_fields(const std::string& world) {
    if (world == "sprites") return {"frames"};
    if (world == "egoworld")
        return {"frames", "depth", "poses", "residual_flow", "fg_mask"};
    if (world == "bevworld")
        return {"frames", "seg", "instance_ids", "centers", "offsets", "future_flow"};
    throw ConfigError("unknown world kind: " + world);
}

std::string sequence_filename(int64_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "seq_%05lld.bin", static_cast<long long>(index));
    return buf;
}

Tensor stack_time(const std::vector<Tensor>& frames) {
    check(!frames.empty(), "stack_time: empty sequence");
    Shape s = frames[0].shape();
    Shape out = {static_cast<int64_t>(frames.size())};
    out.insert(out.end(), s.begin(), s.end());
    Tensor t(out);
    int64_t stride = frames[0].size();
    for (size_t i = 0; i < frames.size(); ++i) {
        check(frames[i].shape() == s, "stack_time: inconsistent shapes");
        std::copy(frames[i].data(), frames[i].data() + stride, t.data() + i * stride);
    }
    return t;
}

std::vector<Tensor> unstack_time(const Tensor& stacked) {
    check(stacked.rank() >= 2, "unstack_time: rank >= 2 required");
    Shape inner(stacked.shape().begin() + 1, stacked.shape().end());
    int64_t T = stacked.dim(0), stride = numel(inner);
    std::vector<Tensor> out;
    for (int64_t i = 0; i < T; ++i) {
        Tensor f(inner);
        std::copy(stacked.data() + i * stride, stacked.data() + (i + 1) * stride,
                  f.data());
        out.push_back(std::move(f));
    }
    return out;
}

void write_manifest(const std::string& dir, const DatasetManifest& m) {
    std::ofstream os(dir + "/manifest.txt");
    if (!os) throw IoError("cannot write manifest in " + dir);
    os << "world = " << m.world << "\n";
    os << "sequence_count = " << m.sequence_count << "\n";
    os << "t = " << m.t << "\n";
    os << "channels = " << m.frame_shape[0] << "\n";
    os << "height = " << m.frame_shape[1] << "\n";
    os << "width = " << m.frame_shape[2] << "\n";
    os << "seed = " << m.seed << "\n";
    os << "config_hash = " << m.config_hash << "\n";
    os << "fields =";
    for (const auto& f : m.fields) os << " " << f;
    os << "\n";
}

DatasetManifest read_manifest(const std::string& dir) {
    std::ifstream is(dir + "/manifest.txt");
    if (!is) throw IoError("cannot read manifest in " + dir);
    DatasetManifest m;
    m.frame_shape = {0, 0, 0};
    std::string line;
    while (std::getline(is, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        std::string key = line.substr(0, eq);
        std::string val = line.substr(eq + 1);
        auto trim = [](std::string& s) {
            s.erase(0, s.find_first_not_of(" \t"));
            s.erase(s.find_last_not_of(" \t") + 1);
        };
        trim(key);
        trim(val);
        if (key == "world")
            m.world = val;
        else if (key == "sequence_count")
            m.sequence_count = std::stoll(val);
        else if (key == "t")
            m.t = std::stoll(val);
        else if (key == "channels")
            m.frame_shape[0] = std::stoll(val);
        else if (key == "height")
            m.frame_shape[1] = std::stoll(val);
        else if (key == "width")
            m.frame_shape[2] = std::stoll(val);
        else if (key == "seed")
            m.seed = std::stoull(val);
        else if (key == "config_hash")
            m.config_hash = val;
        else if (key == "fields") {
            std::istringstream ss(val);
            std::string f;
            while (ss >> f) m.fields.push_back(f);
        }
    }
    return m;
}

namespace {

const std::vector<Tensor>& field_of(const LabeledSequence& seq, const std::string& f) {
    if (f == "frames") return seq.frames;
    if (f == "seg") return seq.seg;
    if (f == "instance_ids") return seq.instance_ids;
    if (f == "centers") return seq.centers;
    if (f == "offsets") return seq.offsets;
    if (f == "future_flow") return seq.future_flow;
    if (f == "depth") return seq.depth;
    if (f == "poses") return seq.poses;
    if (f == "residual_flow") return seq.residual_flow;
    if (f == "fg_mask") return seq.fg_mask;
    throw ConfigError("unknown sequence field: " + f);
}

std::vector<Tensor>& field_of(LabeledSequence& seq, const std::string& f) {
    return const_cast<std::vector<Tensor>&>(
        field_of(static_cast<const LabeledSequence&>(seq), f));
}

}  // namespace

void write_sequence_file(const std::string& path, const LabeledSequence& seq,
                         const std::string& world) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    for (const auto& f : world_fields(world))
        write_tensor_record(os, stack_time(field_of(seq, f)));
}

LabeledSequence read_sequence_file(const std::string& path, const std::string& world) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    LabeledSequence seq;
    for (const auto& f : world_fields(world))
        field_of(seq, f) = unstack_time(read_tensor_record(is));
    return seq;
}

}  // namespace svp
