#include "tom/trajectory_io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tom/byte_io.hpp"

namespace tom {

namespace {

constexpr char kMagic[4] = {'M', 'G', 'T', '1'};

char visible_code(std::uint8_t v) { return v == kUnseen ? '?' : block_code(static_cast<BlockType>(v)); }

}  // namespace

namespace {
Trajectory decode_body(const std::string& bytes);
}  // namespace

std::string encode_trajectory(const Trajectory& t) {
    ByteWriter w;
    w.put_bytes(kMagic, 4);
    w.put<std::uint8_t>(kTrajectoryVersion);
    w.put_string16(t.map_id);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.profile.id));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.profile.strategy));
    w.put_f64(t.profile.noise);
    w.put<std::uint64_t>(t.seed);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.width));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(t.height));
    w.put<std::uint8_t>(kNumBlockTypes);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.steps.size()));
    w.put<std::uint8_t>(t.stalled ? 1 : 0);
    w.put<std::int32_t>(t.final_score);
    for (const TrajectoryStep& s : t.steps) {
        const Observation& o = s.observation;
        if (o.visible.width() != t.width || o.visible.height() != t.height)
            throw TrajectoryFormatError(TrajectoryFormatError::Kind::invalid, "observation size mismatch");
        w.put<std::uint8_t>(static_cast<std::uint8_t>(s.action));
        w.put<std::uint8_t>(o.beep);
        w.put<std::uint16_t>(static_cast<std::uint16_t>(o.pose.pos.x));
        w.put<std::uint16_t>(static_cast<std::uint16_t>(o.pose.pos.y));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(o.pose.facing));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(o.tick));
        w.put_bytes(o.visible.cells().data(), o.visible.size());
    }
    const auto& buf = w.buffer();
    w.put<std::uint64_t>(fnv1a({reinterpret_cast<const unsigned char*>(buf.data()), buf.size()}));
    return std::move(w.buffer());
}

Trajectory decode_trajectory(const std::string& bytes) {
    using Kind = TrajectoryFormatError::Kind;
    if (bytes.size() < 5)
        throw TrajectoryFormatError(Kind::truncated, "trajectory file is truncated");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw TrajectoryFormatError(Kind::bad_magic, "not a trajectory file (bad magic)");
    const auto version = static_cast<std::uint8_t>(bytes[4]);
    if (version != kTrajectoryVersion)
        throw TrajectoryFormatError(Kind::version, "unsupported trajectory version " + std::to_string(version));
    if (bytes.size() < 13) throw TrajectoryFormatError(Kind::truncated, "trajectory file is truncated");

    try {
        return decode_body(bytes);
    } catch (const ShortRead&) {
        throw TrajectoryFormatError(Kind::truncated, "trajectory file is truncated");
    } catch (const TrajectoryFormatError& e) {
        // A corrupted byte can surface as a nonsense field; report it as corruption.
        const bool intact = read_u64_le(bytes, bytes.size() - 8) ==
                            fnv1a({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size() - 8});
        if (e.kind() == Kind::invalid && !intact)
            throw TrajectoryFormatError(Kind::checksum, "trajectory checksum mismatch");
        throw;
    }
}

namespace {

Trajectory decode_body(const std::string& bytes) {
    using Kind = TrajectoryFormatError::Kind;
    // Body excludes the 8-byte checksum trailer.
    ByteReader r(bytes, bytes.size() - 8);
    r.get<std::uint32_t>();
    r.get<std::uint8_t>();
    Trajectory t;
    t.map_id = r.get_string16();
    t.profile.id = static_cast<int>(r.get<std::uint32_t>());
    const auto strategy = r.get<std::uint8_t>();
    if (strategy > 2) throw TrajectoryFormatError(Kind::invalid, "unknown strategy code");
    t.profile.strategy = static_cast<Strategy>(strategy);
    t.profile.noise = r.get_f64();
    t.seed = r.get<std::uint64_t>();
    t.width = r.get<std::uint16_t>();
    t.height = r.get<std::uint16_t>();
    const auto k = r.get<std::uint8_t>();
    if (k != kNumBlockTypes) throw TrajectoryFormatError(Kind::invalid, "block type count mismatch");
    const auto ticks = r.get<std::uint32_t>();
    t.stalled = (r.get<std::uint8_t>() & 1) != 0;
    t.final_score = r.get<std::int32_t>();
    const std::size_t cells = static_cast<std::size_t>(t.width) * t.height;
    const std::size_t record = 11 + cells;
    if (r.pos() + record * ticks > bytes.size() - 8)
        throw TrajectoryFormatError(Kind::truncated, "trajectory file is truncated");
    t.steps.resize(ticks);
    for (auto& s : t.steps) {
        const auto action = r.get<std::uint8_t>();
        if (action >= kNumActions) throw TrajectoryFormatError(Kind::invalid, "unknown action code");
        s.action = static_cast<Action>(action);
        Observation& o = s.observation;
        o.beep = r.get<std::uint8_t>();
        o.pose.pos.x = r.get<std::uint16_t>();
        o.pose.pos.y = r.get<std::uint16_t>();
        o.pose.facing = static_cast<Facing>(r.get<std::uint8_t>() & 3);
        o.tick = static_cast<int>(r.get<std::uint32_t>());
        o.visible = Grid<std::uint8_t>(t.width, t.height);
        r.get_bytes(o.visible.cells().data(), cells);
    }
    if (r.pos() != bytes.size() - 8) throw TrajectoryFormatError(Kind::invalid, "trailing bytes in trajectory");
    const std::uint64_t stored = read_u64_le(bytes, bytes.size() - 8);
    const auto actual = fnv1a({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size() - 8});
    if (stored != actual) throw TrajectoryFormatError(Kind::checksum, "trajectory checksum mismatch");
    return t;
}

}  // namespace

void save_trajectory(const Trajectory& trajectory, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw TrajectoryFormatError(TrajectoryFormatError::Kind::io, "cannot write " + path);
    const std::string bytes = encode_trajectory(trajectory);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw TrajectoryFormatError(TrajectoryFormatError::Kind::io, "write failed: " + path);
}

Trajectory load_trajectory(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw TrajectoryFormatError(TrajectoryFormatError::Kind::io, "cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return decode_trajectory(ss.str());
}

std::string trajectory_to_json(const Trajectory& t) {
    nlohmann::json j;
    j["format"] = "tom-trajectory";
    j["version"] = kTrajectoryVersion;
    j["map_id"] = t.map_id;
    j["profile"] = {{"id", t.profile.id},
                    {"strategy", std::string(strategy_name(t.profile.strategy))},
                    {"noise", t.profile.noise}};
    j["seed"] = t.seed;
    j["width"] = t.width;
    j["height"] = t.height;
    j["block_types"] = kNumBlockTypes;
    j["ticks"] = t.steps.size();
    j["stalled"] = t.stalled;
    j["final_score"] = t.final_score;
    nlohmann::json steps = nlohmann::json::array();
    for (const TrajectoryStep& s : t.steps) {
        const Observation& o = s.observation;
        nlohmann::json rows = nlohmann::json::array();
        for (int y = 0; y < t.height; ++y) {
            std::string row;
            for (int x = 0; x < t.width; ++x) row.push_back(visible_code(o.visible.at(x, y)));
            rows.push_back(row);
        }
        steps.push_back({{"tick", o.tick},
                         {"action", std::string(action_name(s.action))},
                         {"beep", o.beep},
                         {"pose", {{"x", o.pose.pos.x}, {"y", o.pose.pos.y}, {"facing", static_cast<int>(o.pose.facing)}}},
                         {"visible", rows}});
    }
    j["steps"] = steps;
    return j.dump();
}

Trajectory trajectory_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "tom-trajectory") throw std::invalid_argument("not a trajectory JSON document");
    if (j.at("version") != kTrajectoryVersion)
        throw TrajectoryFormatError(TrajectoryFormatError::Kind::version, "unsupported trajectory version");
    Trajectory t;
    t.map_id = j.at("map_id");
    t.profile.id = j.at("profile").at("id");
    t.profile.strategy = strategy_from_name(j.at("profile").at("strategy").get<std::string>());
    t.profile.noise = j.at("profile").at("noise");
    t.seed = j.at("seed");
    t.width = j.at("width");
    t.height = j.at("height");
    t.stalled = j.at("stalled");
    t.final_score = j.at("final_score");
    for (const auto& s : j.at("steps")) {
        TrajectoryStep step;
        const std::string action = s.at("action");
        for (int a = 0; a < kNumActions; ++a) {
            if (action_name(static_cast<Action>(a)) == action) step.action = static_cast<Action>(a);
        }
        Observation& o = step.observation;
        o.tick = s.at("tick");
        o.beep = s.at("beep");
        o.pose = {{s.at("pose").at("x"), s.at("pose").at("y")}, static_cast<Facing>(s.at("pose").at("facing").get<int>())};
        o.visible = Grid<std::uint8_t>(t.width, t.height);
        const auto rows = s.at("visible").get<std::vector<std::string>>();
        for (int y = 0; y < t.height; ++y) {
            for (int x = 0; x < t.width; ++x) {
                const char c = rows.at(y).at(x);
                o.visible.at(x, y) = c == '?' ? kUnseen : static_cast<std::uint8_t>(block_from_code(c));
            }
        }
        t.steps.push_back(std::move(step));
    }
    return t;
}

}  // namespace tom
