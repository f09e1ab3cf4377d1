#include "infloc/json_io.hpp"

#include <json.hpp>

namespace infloc::json_io {

using nlohmann::ordered_json;
using netmodel::BusKind;
using netmodel::Network;

namespace {

constexpr int kSchemaVersion = 1;

BusKind kind_from_string(const std::string& s) {
    if (s == "slack") return BusKind::Slack;
    if (s == "pv") return BusKind::PV;
    if (s == "pq") return BusKind::PQ;
    throw MalformedCase("unknown bus kind '" + s + "'");
}

}  // namespace

std::string network_to_json(const Network& net, int indent) {
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["name"] = net.name;
    j["base_mva"] = net.base_mva;
    j["alpha"] = net.alpha;
    j["buses"] = ordered_json::array();
    for (const auto& b : net.buses) {
        j["buses"].push_back({{"id", b.id},
                              {"kind", netmodel::to_string(b.kind)},
                              {"v_set", b.v_set},
                              {"theta_set", b.theta_set},
                              {"shunt_g", b.shunt_g},
                              {"shunt_b", b.shunt_b},
                              {"base_kv", b.base_kv},
                              {"vm0", b.vm0},
                              {"va0", b.va0}});
    }
    j["branches"] = ordered_json::array();
    for (const auto& br : net.branches) {
        j["branches"].push_back({{"from", br.from_bus},
                                 {"to", br.to_bus},
                                 {"r", br.r},
                                 {"x", br.x},
                                 {"b", br.b_charging},
                                 {"tap", br.tap},
                                 {"shift", br.shift},
                                 {"in_service", br.in_service}});
    }
    j["generators"] = ordered_json::array();
    for (const auto& g : net.generators) {
        j["generators"].push_back({{"bus", g.bus},
                                   {"p_set", g.p_set},
                                   {"v_set", g.v_set},
                                   {"q_set", g.q_set},
                                   {"q_min", g.q_min},
                                   {"q_max", g.q_max},
                                   {"in_service", g.in_service}});
    }
    j["loads"] = ordered_json::array();
    for (const auto& l : net.loads) {
        j["loads"].push_back({{"bus", l.bus}, {"p", l.p}, {"q", l.q}});
    }
    return j.dump(indent);
}

Network network_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw MalformedCase(std::string("invalid JSON: ") + e.what());
    }
    try {
        if (j.at("schema_version").get<int>() != kSchemaVersion) {
            throw MalformedCase("unsupported schema_version");
        }
        Network net;
        net.name = j.at("name").get<std::string>();
        net.base_mva = j.at("base_mva").get<double>();
        net.alpha = j.at("alpha").get<double>();
        for (const auto& e : j.at("buses")) {
            netmodel::Bus b;
            b.id = e.at("id").get<int>();
            b.kind = kind_from_string(e.at("kind").get<std::string>());
            b.v_set = e.at("v_set").get<double>();
            b.theta_set = e.at("theta_set").get<double>();
            b.shunt_g = e.at("shunt_g").get<double>();
            b.shunt_b = e.at("shunt_b").get<double>();
            b.base_kv = e.at("base_kv").get<double>();
            b.vm0 = e.at("vm0").get<double>();
            b.va0 = e.at("va0").get<double>();
            net.buses.push_back(b);
        }
        for (const auto& e : j.at("branches")) {
            netmodel::Branch br;
            br.from_bus = e.at("from").get<int>();
            br.to_bus = e.at("to").get<int>();
            br.r = e.at("r").get<double>();
            br.x = e.at("x").get<double>();
            br.b_charging = e.at("b").get<double>();
            br.tap = e.at("tap").get<double>();
            br.shift = e.at("shift").get<double>();
            br.in_service = e.at("in_service").get<bool>();
            net.branches.push_back(br);
        }
        for (const auto& e : j.at("generators")) {
            netmodel::Generator g;
            g.bus = e.at("bus").get<int>();
            g.p_set = e.at("p_set").get<double>();
            g.v_set = e.at("v_set").get<double>();
            g.q_set = e.at("q_set").get<double>();
            g.q_min = e.at("q_min").get<double>();
            g.q_max = e.at("q_max").get<double>();
            g.in_service = e.at("in_service").get<bool>();
            net.generators.push_back(g);
        }
        for (const auto& e : j.at("loads")) {
            net.loads.push_back({e.at("bus").get<int>(), e.at("p").get<double>(),
                                 e.at("q").get<double>()});
        }
        net.finalize();
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw MalformedCase(std::string("bad network JSON: ") + e.what());
    }
}

}  // namespace infloc::json_io
