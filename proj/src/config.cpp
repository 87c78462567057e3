#include "sparseagg/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sparseagg/common.hpp"

namespace sparseagg {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

struct FieldBinder {
    // key -> setter(raw value text)
    std::map<std::string, std::function<void(const std::string&)>> setters;
    // key -> serializer
    std::vector<std::pair<std::string, std::function<std::string()>>> order;

    static std::string unquote(const std::string& key, const std::string& raw) {
        std::string s = trim(raw);
        if (s.size() >= 2 && s.front() == '"' && s.back() == '"') return s.substr(1, s.size() - 2);
        if (!s.empty() && s.find_first_of("\"[]") == std::string::npos) return s;
        throw ConfigError("config: bad string value for " + key + ": " + raw);
    }

    void bind_int(const std::string& key, int* v) {
        setters[key] = [key, v](const std::string& raw) {
            try {
                std::size_t pos = 0;
                const long val = std::stol(trim(raw), &pos);
                if (pos != trim(raw).size()) throw std::invalid_argument("trailing");
                *v = static_cast<int>(val);
            } catch (const std::exception&) {
                throw ConfigError("config: expected integer for " + key + ", got: " + trim(raw));
            }
        };
        order.emplace_back(key, [v] { return std::to_string(*v); });
    }

    void bind_u64(const std::string& key, std::uint64_t* v) {
        setters[key] = [key, v](const std::string& raw) {
            try {
                std::size_t pos = 0;
                *v = std::stoull(trim(raw), &pos);
                if (pos != trim(raw).size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigError("config: expected integer for " + key + ", got: " + trim(raw));
            }
        };
        order.emplace_back(key, [v] { return std::to_string(*v); });
    }

    void bind_double(const std::string& key, double* v) {
        setters[key] = [key, v](const std::string& raw) {
            try {
                std::size_t pos = 0;
                *v = std::stod(trim(raw), &pos);
                if (pos != trim(raw).size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw ConfigError("config: expected number for " + key + ", got: " + trim(raw));
            }
        };
        order.emplace_back(key, [v] {
            char buf[64];
            std::snprintf(buf, sizeof(buf), "%.17g", *v);
            return std::string(buf);
        });
    }

    void bind_bool(const std::string& key, bool* v) {
        setters[key] = [key, v](const std::string& raw) {
            const std::string s = trim(raw);
            if (s == "true") {
                *v = true;
            } else if (s == "false") {
                *v = false;
            } else {
                throw ConfigError("config: expected true/false for " + key + ", got: " + s);
            }
        };
        order.emplace_back(key, [v] { return *v ? "true" : "false"; });
    }

    void bind_string(const std::string& key, std::string* v) {
        setters[key] = [key, v](const std::string& raw) { *v = unquote(key, raw); };
        order.emplace_back(key, [v] { return "\"" + *v + "\""; });
    }

    void bind_int_list(const std::string& key, std::vector<int>* v) {
        setters[key] = [key, v](const std::string& raw) {
            std::string s = trim(raw);
            if (s.size() < 2 || s.front() != '[' || s.back() != ']') {
                throw ConfigError("config: expected [a, b, ...] for " + key + ", got: " + s);
            }
            s = s.substr(1, s.size() - 2);
            std::vector<int> out;
            std::stringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ',')) {
                item = trim(item);
                if (item.empty()) continue;
                try {
                    std::size_t pos = 0;
                    out.push_back(static_cast<int>(std::stol(item, &pos)));
                    if (pos != item.size()) throw std::invalid_argument("trailing");
                } catch (const std::exception&) {
                    throw ConfigError("config: bad integer '" + item + "' in list " + key);
                }
            }
            *v = std::move(out);
        };
        order.emplace_back(key, [v] {
            std::string s = "[";
            for (std::size_t i = 0; i < v->size(); ++i) {
                if (i) s += ", ";
                s += std::to_string((*v)[i]);
            }
            return s + "]";
        });
    }
};

FieldBinder make_binder(RunConfig& c) {
    FieldBinder b;
    b.bind_int("model.channels", &c.channels);
    b.bind_int("model.groups", &c.groups);
    b.bind_int("model.learnable_points", &c.learnable_points);
    b.bind_int("model.depth_bins", &c.depth_bins);
    b.bind_int("model.stages", &c.stages);
    b.bind_int("model.attn_heads", &c.attn_heads);
    b.bind_int("model.instances", &c.instances);
    b.bind_int("model.num_classes", &c.num_classes);
    b.bind_string("model.weight_norm", &c.weight_norm);
    b.bind_bool("model.classify_every_stage", &c.classify_every_stage);
    b.bind_double("model.depth_min", &c.depth_min);
    b.bind_double("model.depth_max", &c.depth_max);
    b.bind_double("model.pos_norm", &c.pos_norm);

    b.bind_int("scene.frames", &c.frames);
    b.bind_int("scene.cameras", &c.cameras);
    b.bind_int("scene.scales", &c.scales);
    b.bind_double("scene.frame_interval", &c.frame_interval);
    b.bind_int("scene.image_width", &c.image_width);
    b.bind_int("scene.image_height", &c.image_height);
    b.bind_int_list("scene.strides", &c.strides);
    b.bind_int("scene.boxes_min", &c.boxes_min);
    b.bind_int("scene.boxes_max", &c.boxes_max);
    b.bind_double("scene.range_xy", &c.range_xy);
    b.bind_double("scene.z_min", &c.z_min);
    b.bind_double("scene.z_max", &c.z_max);
    b.bind_double("scene.dim_min", &c.dim_min);
    b.bind_double("scene.dim_max", &c.dim_max);
    b.bind_double("scene.speed_max", &c.speed_max);
    b.bind_double("scene.ego_speed", &c.ego_speed);
    b.bind_double("scene.ego_yaw_rate", &c.ego_yaw_rate);
    b.bind_double("scene.fov_deg", &c.fov_deg);
    b.bind_double("scene.min_range", &c.min_range);
    b.bind_double("scene.sentinel_depth", &c.sentinel_depth);
    b.bind_bool("scene.spawn_visible_only", &c.spawn_visible_only);
    b.bind_bool("scene.ego_compensation", &c.ego_compensation);

    b.bind_int("train.steps", &c.steps);
    b.bind_int("train.batch_size", &c.batch_size);
    b.bind_double("train.lr", &c.lr);
    b.bind_double("train.lr_min", &c.lr_min);
    b.bind_double("train.weight_decay", &c.weight_decay);
    b.bind_double("train.beta1", &c.beta1);
    b.bind_double("train.beta2", &c.beta2);
    b.bind_double("train.adam_eps", &c.adam_eps);
    b.bind_double("train.detach_prob", &c.detach_prob);
    b.bind_u64("train.seed", &c.seed);
    b.bind_int("train.log_every", &c.log_every);

    b.bind_double("loss.lambda_cls", &c.lambda_cls);
    b.bind_double("loss.lambda_box", &c.lambda_box);
    b.bind_double("loss.lambda_depth", &c.lambda_depth);
    b.bind_double("loss.focal_alpha", &c.focal_alpha);
    b.bind_double("loss.focal_gamma", &c.focal_gamma);
    b.bind_double("loss.match_w_cls", &c.match_w_cls);
    b.bind_double("loss.match_w_box", &c.match_w_box);

    b.bind_double("eval.confidence_floor", &c.confidence_floor);
    return b;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
    RunConfig cfg;
    FieldBinder binder = make_binder(cfg);
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError("config: malformed section header on line " +
                                  std::to_string(lineno) + ": " + line);
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: expected key = value on line " + std::to_string(lineno) +
                              ": " + line);
        }
        const std::string key = (section.empty() ? "" : section + ".") + trim(line.substr(0, eq));
        const std::string value = line.substr(eq + 1);
        auto it = binder.setters.find(key);
        if (it == binder.setters.end()) {
            throw ConfigError("config: unknown key '" + key + "' on line " + std::to_string(lineno));
        }
        it->second(value);
    }
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string RunConfig::serialize() const {
    RunConfig copy = *this;
    FieldBinder binder = make_binder(copy);
    std::string out;
    std::string section;
    for (const auto& [key, fmt] : binder.order) {
        const std::size_t dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (!out.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += key.substr(dot + 1) + " = " + fmt() + "\n";
    }
    return out;
}

void RunConfig::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("config: cannot write file: " + path);
    out << serialize();
}

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };

    if (channels < 4) fail("model.channels must be >= 4");
    if (groups < 1) fail("model.groups must be >= 1");
    if (channels % groups != 0) fail("model.channels must be divisible by model.groups");
    if (channels % 4 != 0) fail("model.channels must be divisible by 4");
    if (attn_heads < 1) fail("model.attn_heads must be >= 1");
    if (channels % attn_heads != 0) fail("model.channels must be divisible by model.attn_heads");
    if (learnable_points < 0) fail("model.learnable_points must be >= 0");
    if (depth_bins < 2) fail("model.depth_bins must be >= 2");
    if (stages < 1 || stages > 14) fail("model.stages must be in [1, 14]");
    if (instances < 1) fail("model.instances must be >= 1");
    if (num_classes < 1) fail("model.num_classes must be >= 1");
    if (weight_norm != "softmax" && weight_norm != "sigmoid") {
        fail("model.weight_norm must be \"softmax\" or \"sigmoid\"");
    }
    if (!(depth_min > 0)) fail("model.depth_min must be > 0");
    if (!(depth_min < depth_max)) fail("model.depth_min must be < model.depth_max");
    if (!(pos_norm > 0)) fail("model.pos_norm must be > 0");

    if (frames < 1) fail("scene.frames must be >= 1");
    if (cameras < 1) fail("scene.cameras must be >= 1");
    if (scales < 1) fail("scene.scales must be >= 1");
    if (!(frame_interval > 0)) fail("scene.frame_interval must be > 0");
    if (static_cast<int>(strides.size()) != scales) {
        fail("scene.strides must list exactly scene.scales entries");
    }
    for (std::size_t i = 0; i < strides.size(); ++i) {
        if (strides[i] < 1) fail("scene.strides entries must be >= 1");
        if (i > 0 && strides[i] <= strides[i - 1]) fail("scene.strides must be strictly increasing");
        if (image_width % strides[i] != 0 || image_height % strides[i] != 0) {
            fail("scene.image dimensions must be divisible by every stride");
        }
        if (image_width / strides[i] < 2 || image_height / strides[i] < 2) {
            fail("scene.strides produce a feature map smaller than 2x2");
        }
    }
    if (boxes_min < 0) fail("scene.boxes_min must be >= 0");
    if (boxes_max < boxes_min) fail("scene.boxes_max must be >= scene.boxes_min");
    if (boxes_max > instances) fail("scene.boxes_max must be <= model.instances");
    if (!(range_xy > 0)) fail("scene.range_xy must be > 0");
    if (z_min > z_max) fail("scene.z_min must be <= scene.z_max");
    if (!(dim_min > 0)) fail("scene.dim_min must be > 0");
    if (dim_max < dim_min) fail("scene.dim_max must be >= scene.dim_min");
    if (speed_max < 0) fail("scene.speed_max must be >= 0");
    if (!(fov_deg > 10 && fov_deg < 179)) fail("scene.fov_deg must be in (10, 179)");
    if (min_range < 0) fail("scene.min_range must be >= 0");
    if (!(sentinel_depth > depth_max)) fail("scene.sentinel_depth must be > model.depth_max");

    if (steps < 0) fail("train.steps must be >= 0");
    if (batch_size < 1) fail("train.batch_size must be >= 1");
    if (lr < 0) fail("train.lr must be >= 0");
    if (lr_min < 0 || lr_min > lr) fail("train.lr_min must be in [0, train.lr]");
    if (weight_decay < 0) fail("train.weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1)) fail("train.beta1 must be in [0, 1)");
    if (!(beta2 >= 0 && beta2 < 1)) fail("train.beta2 must be in [0, 1)");
    if (!(adam_eps > 0)) fail("train.adam_eps must be > 0");
    if (detach_prob < 0 || detach_prob > 1) fail("train.detach_prob must be in [0, 1]");
    if (log_every < 1) fail("train.log_every must be >= 1");

    if (lambda_cls < 0 || lambda_box < 0 || lambda_depth < 0) {
        fail("loss.lambda_* must be >= 0");
    }
    if (!(focal_alpha > 0 && focal_alpha < 1)) fail("loss.focal_alpha must be in (0, 1)");
    if (focal_gamma < 0) fail("loss.focal_gamma must be >= 0");
    if (match_w_cls < 0 || match_w_box < 0) fail("loss.match_w_* must be >= 0");

    if (confidence_floor < 0 || confidence_floor >= 1) {
        fail("eval.confidence_floor must be in [0, 1)");
    }
}

}  // namespace sparseagg
