#include "gcav/canonical_json.h"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gcav/errors.h"

namespace gcav {

namespace {

void dump_float(double v, std::string& out) {
    if (!std::isfinite(v)) {
        throw DomainError("canonical_dump: non-finite number");
    }
    if (v == 0.0) {
        v = 0.0;  // folds -0 into 0
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    out += buf;
}

void newline(std::string& out, int indent, int depth) {
    if (indent >= 0) {
        out += '\n';
        out.append(static_cast<std::size_t>(indent * depth), ' ');
    }
}

void dump(const Json& v, std::string& out, int indent, int depth) {
    switch (v.type()) {
        case Json::value_t::object: {
            if (v.empty()) {
                out += "{}";
                return;
            }
            out += '{';
            bool first = true;
            // nlohmann's default object type is an ordered std::map.
            for (auto it = v.begin(); it != v.end(); ++it) {
                if (!first) {
                    out += ',';
                }
                first = false;
                newline(out, indent, depth + 1);
                out += Json(it.key()).dump();
                out += indent >= 0 ? ": " : ":";
                dump(it.value(), out, indent, depth + 1);
            }
            newline(out, indent, depth);
            out += '}';
            return;
        }
        case Json::value_t::array: {
            if (v.empty()) {
                out += "[]";
                return;
            }
            // Numeric arrays stay on one line even when indenting.
            bool scalar = std::all_of(v.begin(), v.end(), [](const Json& e) {
                return e.is_number() || e.is_string() || e.is_boolean() || e.is_null();
            });
            out += '[';
            bool first = true;
            for (const auto& e : v) {
                if (!first) {
                    out += ',';
                }
                first = false;
                if (!scalar) {
                    newline(out, indent, depth + 1);
                }
                dump(e, out, indent, depth + 1);
            }
            if (!scalar) {
                newline(out, indent, depth);
            }
            out += ']';
            return;
        }
        case Json::value_t::number_float:
            dump_float(v.get<double>(), out);
            return;
        default:
            out += v.dump();
            return;
    }
}

}  // namespace

std::string canonical_dump(const Json& value, int indent) {
    std::string out;
    dump(value, out, indent, 0);
    return out;
}

Json parse_json(const std::string& text, const std::string& origin) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw FormatError(origin + ": invalid JSON (" + e.what() + ")");
    }
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw FormatError("write failed for " + path.string());
    }
}

Json read_json_file(const std::filesystem::path& path) {
    return parse_json(read_text_file(path), path.string());
}

void write_json_file(const std::filesystem::path& path, const Json& value, int indent) {
    write_text_file(path, canonical_dump(value, indent) + "\n");
}

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace gcav
