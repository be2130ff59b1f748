#include "svp/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace svp {

const std::vector<std::string> kModelKinds = {
    "svg",           "slamp",        "slamp3d-depthonly", "slamp3d-combined",
    "slamp3d-conditional", "srvp",   "srvp++-direct",     "srvp++-mask",
    "stretchbev",    "stretchbev-p", "stretchbev-global"};

namespace {

struct Field {
    const char* name;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_int(int64_t v) { return std::to_string(v); }
std::string fmt_u64(uint64_t v) { return std::to_string(v); }
std::string fmt_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

int64_t to_int(const std::string& s) {
    try {
        size_t pos = 0;
        int64_t v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer '" + s + "'");
    }
}

uint64_t to_u64(const std::string& s) {
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer '" + s + "'");
    }
}

double to_real(const std::string& s) {
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number '" + s + "'");
    }
}

#define STR_FIELD(key)                                              \
    {#key, [](const RunConfig& c) { return c.key; },                \
     [](RunConfig& c, const std::string& v) { c.key = v; }}
#define INT_FIELD(key)                                              \
    {#key, [](const RunConfig& c) { return fmt_int(c.key); },       \
     [](RunConfig& c, const std::string& v) { c.key = to_int(v); }}
#define U64_FIELD(key)                                              \
    {#key, [](const RunConfig& c) { return fmt_u64(c.key); },       \
     [](RunConfig& c, const std::string& v) { c.key = to_u64(v); }}
#define REAL_FIELD(key)                                             \
    {#key, [](const RunConfig& c) { return fmt_real(c.key); },      \
     [](RunConfig& c, const std::string& v) { c.key = to_real(v); }}

const std::vector<Field>& fields() {
    static const std::vector<Field> f = {
        STR_FIELD(model),        STR_FIELD(world),
        INT_FIELD(k),            INT_FIELD(train_horizon), INT_FIELD(eval_horizon),
        INT_FIELD(seq_count),    U64_FIELD(seed),          INT_FIELD(n_samples),
        REAL_FIELD(beta),        REAL_FIELD(lr),           REAL_FIELD(lr_finetune),
        INT_FIELD(steps),        INT_FIELD(pretrain_steps),
        INT_FIELD(checkpoint_every),
        INT_FIELD(enc_base),     INT_FIELD(feat),          INT_FIELD(hidden),
        INT_FIELD(z_dim),        INT_FIELD(z_motion_dim),  INT_FIELD(y_dim),
        INT_FIELD(content_dim),  INT_FIELD(cell_ch),       INT_FIELD(head_ch),
        INT_FIELD(y_ch),         INT_FIELD(z_ch),          INT_FIELD(gru_ch),
        INT_FIELD(hidden_ch),    INT_FIELD(label_base),    REAL_FIELD(delta_t),
        INT_FIELD(euler_substeps),
        INT_FIELD(height),       INT_FIELD(width),
        INT_FIELD(sprite_count), REAL_FIELD(sprite_size),
        REAL_FIELD(speed_min),   REAL_FIELD(speed_max),
        INT_FIELD(grid),         INT_FIELD(agent_count),   REAL_FIELD(turn_prob),
        REAL_FIELD(state_noise), REAL_FIELD(state_atten),
    };
    return f;
}

void apply_defaults(RunConfig& c) {
    if (c.world == "sprites") {
        if (c.k < 0) c.k = 5;
        if (c.train_horizon < 0) c.train_horizon = 10;
        if (c.eval_horizon < 0) c.eval_horizon = 20;
        if (c.height < 0) c.height = 32;
        if (c.width < 0) c.width = 32;
    } else if (c.world == "egoworld") {
        if (c.k < 0) c.k = 10;
        if (c.train_horizon < 0) c.train_horizon = 10;
        if (c.eval_horizon < 0) c.eval_horizon = 20;
        if (c.height < 0) c.height = 48;
        if (c.width < 0) c.width = 32;
    } else if (c.world == "bevworld") {
        if (c.k < 0) c.k = 3;
        if (c.train_horizon < 0) c.train_horizon = 4;
        if (c.eval_horizon < 0) c.eval_horizon = 4;  // short; mid 8, long 12
        if (c.height < 0) c.height = c.grid;
        if (c.width < 0) c.width = c.grid;
    }
    if (c.lr_finetune < 0) c.lr_finetune = c.lr / 10.0;
    if (c.checkpoint_every <= 0) c.checkpoint_every = std::max<int64_t>(1, c.steps / 5);
}

}  // namespace

namespace {
void config_check(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}
}  // namespace

void validate(const RunConfig& c) {
    config_check(std::find(kModelKinds.begin(), kModelKinds.end(), c.model) !=
                     kModelKinds.end(),
                 "config: unknown model kind '" + c.model + "'");
    bool is3d = c.model.rfind("slamp3d", 0) == 0;
    bool isbev = c.model.rfind("stretchbev", 0) == 0;
    if (is3d && c.world != "egoworld")
        throw ConfigError("config: " + c.model + " requires world = egoworld");
    if (isbev && c.world != "bevworld")
        throw ConfigError("config: " + c.model + " requires world = bevworld");
    if (!is3d && !isbev && c.world == "bevworld")
        throw ConfigError("config: " + c.model + " cannot run on the BEV world");
    config_check(c.world == "sprites" || c.world == "egoworld" || c.world == "bevworld",
                 "config: unknown world '" + c.world + "'");
    config_check(c.k >= 1 && c.train_horizon >= 1 && c.eval_horizon >= 1,
                 "config: k and horizons must be positive");
    config_check(c.steps >= 0 && c.pretrain_steps >= 0, "config: negative step counts");
    config_check(c.n_samples >= 1, "config: n_samples must be positive");
    config_check(c.seq_count >= 1, "config: seq_count must be positive");
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::map<std::string, const Field*> by_name;
    for (const auto& f : fields()) by_name[f.name] = &f;

    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string& s) {
            s.erase(0, s.find_first_not_of(" \t\r"));
            s.erase(s.find_last_not_of(" \t\r") + 1);
        };
        trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value'");
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        trim(key);
        trim(val);
        auto it = by_name.find(key);
        if (it == by_name.end())
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": unknown key '" + key + "'");
        it->second->set(cfg, val);
    }
    apply_defaults(cfg);
    validate(cfg);
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

std::string canonical_text(const RunConfig& cfg) {
    std::string out;
    for (const auto& f : fields()) {
        out += f.name;
        out += " = ";
        out += f.get(cfg);
        out += "\n";
    }
    return out;
}

std::string config_hash(const RunConfig& cfg) {
    std::string text = canonical_text(cfg);
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace svp
