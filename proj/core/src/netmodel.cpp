#include "infloc/netmodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <queue>
#include <sstream>

namespace infloc::netmodel {

const char* to_string(BusKind kind) {
    switch (kind) {
        case BusKind::Slack: return "slack";
        case BusKind::PV: return "pv";
        case BusKind::PQ: return "pq";
    }
    return "?";
}

const char* to_string(DiagCode code) {
    switch (code) {
        case DiagCode::DuplicateBusId: return "DuplicateBusId";
        case DiagCode::DanglingBranch: return "DanglingBranch";
        case DiagCode::NoSlack: return "NoSlack";
        case DiagCode::MultipleSlack: return "MultipleSlack";
        case DiagCode::ZeroImpedanceBranch: return "ZeroImpedanceBranch";
        case DiagCode::NonPositiveTap: return "NonPositiveTap";
        case DiagCode::BadVoltageSetpoint: return "BadVoltageSetpoint";
        case DiagCode::IslandDetected: return "IslandDetected";
        case DiagCode::NonFiniteValue: return "NonFiniteValue";
        case DiagCode::GenAtPqBusFolded: return "GenAtPqBusFolded";
        case DiagCode::PvBusWithoutGenDemoted: return "PvBusWithoutGenDemoted";
        case DiagCode::KClampedToInjectionCount: return "KClampedToInjectionCount";
    }
    return "?";
}

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

// ---------------------------------------------------------------------------
// MATPOWER scanner. Matrix tables only; MATLAB expressions are rejected.
// ---------------------------------------------------------------------------

struct Scanner {
    std::string_view text;
    size_t pos = 0;

    bool eof() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }

    void skip_ws_and_comments() {
        while (!eof()) {
            char ch = text[pos];
            if (ch == '%') {
                while (!eof() && text[pos] != '\n') ++pos;
            } else if (ch == '.' && pos + 2 < text.size() && text[pos + 1] == '.' &&
                       text[pos + 2] == '.') {
                // MATLAB line continuation
                pos += 3;
                while (!eof() && text[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(ch)) || ch == ',') {
                ++pos;
            } else {
                break;
            }
        }
    }

    std::string_view ident() {
        size_t start = pos;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(text[pos])) ||
                          text[pos] == '_')) {
            ++pos;
        }
        return text.substr(start, pos - start);
    }
};

struct RawTables {
    std::string name;
    double base_mva = -1.0;
    std::vector<std::vector<double>> bus, gen, branch;
    bool have_bus = false, have_gen = false, have_branch = false;
};

std::vector<std::vector<double>> parse_matrix(Scanner& sc, const std::string& table) {
    // scanner is positioned just after '['
    std::vector<std::vector<double>> rows;
    std::vector<double> row;
    while (true) {
        sc.skip_ws_and_comments();
        if (sc.eof()) throw MalformedCase("unterminated matrix in table '" + table + "'");
        char ch = sc.peek();
        if (ch == ']') {
            ++sc.pos;
            break;
        }
        if (ch == ';' || ch == '\n') {
            ++sc.pos;
            if (!row.empty()) {
                rows.push_back(std::move(row));
                row.clear();
            }
            continue;
        }
        const char* begin = sc.text.data() + sc.pos;
        const char* end = sc.text.data() + sc.text.size();
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(begin, end, value);
        if (ec != std::errc() || ptr == begin) {
            throw MalformedCase("bad numeric token in table '" + table + "' near offset " +
                                std::to_string(sc.pos));
        }
        sc.pos += static_cast<size_t>(ptr - begin);
        row.push_back(value);
        // a newline directly after a value also terminates the row
        size_t look = sc.pos;
        while (look < sc.text.size() &&
               (sc.text[look] == ' ' || sc.text[look] == '\t' || sc.text[look] == ','))
            ++look;
        if (look < sc.text.size() && sc.text[look] == '\n') {
            rows.push_back(std::move(row));
            row.clear();
            sc.pos = look + 1;
        }
    }
    if (!row.empty()) rows.push_back(std::move(row));
    return rows;
}

void skip_value(Scanner& sc) {
    sc.skip_ws_and_comments();
    if (sc.eof()) return;
    char ch = sc.peek();
    auto skip_until = [&](char open, char close) {
        int depth = 0;
        while (!sc.eof()) {
            char c = sc.text[sc.pos];
            if (c == '%') {
                while (!sc.eof() && sc.text[sc.pos] != '\n') ++sc.pos;
                continue;
            }
            if (c == '\'') {  // quoted string; skip to closing quote
                ++sc.pos;
                while (!sc.eof() && sc.text[sc.pos] != '\'') ++sc.pos;
                if (!sc.eof()) ++sc.pos;
                continue;
            }
            if (c == open) ++depth;
            if (c == close) {
                --depth;
                ++sc.pos;
                if (depth == 0) return;
                continue;
            }
            ++sc.pos;
        }
    };
    if (ch == '[') {
        skip_until('[', ']');
    } else if (ch == '{') {
        skip_until('{', '}');
    } else if (ch == '\'') {
        ++sc.pos;
        while (!sc.eof() && sc.peek() != '\'') ++sc.pos;
        if (!sc.eof()) ++sc.pos;
    } else {
        while (!sc.eof() && sc.peek() != ';' && sc.peek() != '\n') ++sc.pos;
    }
}

RawTables scan_case(std::string_view text) {
    RawTables raw;
    Scanner sc{text};
    std::string var = "mpc";
    while (true) {
        sc.skip_ws_and_comments();
        if (sc.eof()) break;
        if (std::isalpha(static_cast<unsigned char>(sc.peek())) || sc.peek() == '_') {
            size_t mark = sc.pos;
            std::string_view word = sc.ident();
            if (word == "function") {
                // function mpc = casename
                sc.skip_ws_and_comments();
                std::string_view lhs = sc.ident();
                sc.skip_ws_and_comments();
                if (!sc.eof() && sc.peek() == '=') {
                    ++sc.pos;
                    sc.skip_ws_and_comments();
                    raw.name = std::string(sc.ident());
                    var = std::string(lhs);
                } else {
                    raw.name = std::string(lhs);
                }
                continue;
            }
            if (word == var && !sc.eof() && sc.peek() == '.') {
                ++sc.pos;
                std::string field(sc.ident());
                sc.skip_ws_and_comments();
                if (sc.eof() || sc.peek() != '=') continue;
                ++sc.pos;
                sc.skip_ws_and_comments();
                if (field == "baseMVA") {
                    const char* begin = sc.text.data() + sc.pos;
                    const char* end = sc.text.data() + sc.text.size();
                    double value = 0.0;
                    auto [ptr, ec] = std::from_chars(begin, end, value);
                    if (ec != std::errc()) throw MalformedCase("bad baseMVA value");
                    sc.pos += static_cast<size_t>(ptr - begin);
                    raw.base_mva = value;
                } else if (field == "bus" || field == "gen" || field == "branch") {
                    if (sc.eof() || sc.peek() != '[')
                        throw MalformedCase("table '" + field + "' is not a matrix");
                    ++sc.pos;
                    auto rows = parse_matrix(sc, field);
                    if (field == "bus") {
                        raw.bus = std::move(rows);
                        raw.have_bus = true;
                    } else if (field == "gen") {
                        raw.gen = std::move(rows);
                        raw.have_gen = true;
                    } else {
                        raw.branch = std::move(rows);
                        raw.have_branch = true;
                    }
                } else {
                    skip_value(sc);
                }
                continue;
            }
            (void)mark;
            continue;
        }
        ++sc.pos;  // stray punctuation (;, ], etc.)
    }
    return raw;
}

}  // namespace

void Network::finalize() {
    index_.clear();
    index_.reserve(buses.size() * 2);
    slack_ = -1;
    for (size_t i = 0; i < buses.size(); ++i) {
        index_.emplace(buses[i].id, static_cast<int>(i));
        if (buses[i].kind == BusKind::Slack && slack_ < 0) slack_ = static_cast<int>(i);
    }
}

int Network::index_of(int external_id) const {
    auto it = index_.find(external_id);
    if (it == index_.end()) {
        throw InvalidTopology("unknown bus id " + std::to_string(external_id));
    }
    return it->second;
}

Network parse_matpower(std::string_view text) {
    RawTables raw = scan_case(text);
    if (raw.base_mva <= 0.0) throw MalformedCase("missing or non-positive baseMVA");
    if (!raw.have_bus) throw MalformedCase("missing bus table");
    if (!raw.have_gen) throw MalformedCase("missing gen table");
    if (!raw.have_branch) throw MalformedCase("missing branch table");

    Network net;
    net.name = raw.name;
    net.base_mva = raw.base_mva;
    net.alpha = 1.0;
    const double base = net.base_mva;

    net.buses.reserve(raw.bus.size());
    for (const auto& row : raw.bus) {
        if (row.size() < 9) throw MalformedCase("bus row with fewer than 9 columns");
        Bus b;
        b.id = static_cast<int>(row[0]);
        int type = static_cast<int>(row[1]);
        switch (type) {
            case 3: b.kind = BusKind::Slack; break;
            case 2: b.kind = BusKind::PV; break;
            case 1: b.kind = BusKind::PQ; break;
            case 4: b.kind = BusKind::PQ; break;  // isolated; island check reports it
            default:
                throw MalformedCase("bus " + std::to_string(b.id) + " has unknown type " +
                                    std::to_string(type));
        }
        b.shunt_g = row[4] / base;
        b.shunt_b = row[5] / base;
        b.vm0 = row[7];
        b.va0 = row[8] * kDegToRad;
        b.v_set = b.vm0;
        b.theta_set = b.va0;
        b.base_kv = row.size() > 9 ? row[9] : 0.0;
        net.buses.push_back(b);
        if (row[2] != 0.0 || row[3] != 0.0) {
            net.loads.push_back({b.id, row[2] / base, row[3] / base});
        }
    }

    // aggregate in-service generators per bus, preserving bus order
    std::map<int, Generator> agg;
    for (const auto& row : raw.gen) {
        if (row.size() < 8) throw MalformedCase("gen row with fewer than 8 columns");
        if (row[7] <= 0.0) continue;  // out of service: dropped
        int bus_id = static_cast<int>(row[0]);
        auto [it, fresh] = agg.emplace(bus_id, Generator{});
        Generator& g = it->second;
        if (fresh) {
            g.bus = bus_id;
            g.v_set = row[5];
        }
        g.p_set += row[1] / base;
        g.q_set += row[2] / base;
        g.q_max += row[3] / base;
        g.q_min += row[4] / base;
        g.in_service = true;
    }

    net.branches.reserve(raw.branch.size());
    for (size_t k = 0; k < raw.branch.size(); ++k) {
        const auto& row = raw.branch[k];
        if (row.size() < 11) throw MalformedCase("branch row with fewer than 11 columns");
        if (row[10] <= 0.0) continue;  // out of service: dropped
        Branch br;
        br.from_bus = static_cast<int>(row[0]);
        br.to_bus = static_cast<int>(row[1]);
        br.r = row[2];
        br.x = row[3];
        br.b_charging = row[4];
        br.tap = row[8] != 0.0 ? row[8] : 1.0;
        br.shift = row[9] * kDegToRad;
        br.in_service = true;
        net.branches.push_back(br);
    }

    // normalizations: fold PQ-bus generators into loads, demote generator-less
    // PV buses, keep a single slack
    bool saw_slack = false;
    for (auto& b : net.buses) {
        if (b.kind == BusKind::Slack) {
            if (saw_slack) {
                b.kind = BusKind::PV;
                net.normalizations.push_back(
                    {DiagCode::MultipleSlack, b.id, -1,
                     "extra slack bus demoted to PV"});
            }
            saw_slack = true;
        }
    }
    for (auto& b : net.buses) {
        auto it = agg.find(b.id);
        if (b.kind == BusKind::PQ && it != agg.end()) {
            net.loads.push_back({b.id, -it->second.p_set, -it->second.q_set});
            net.normalizations.push_back(
                {DiagCode::GenAtPqBusFolded, b.id, -1,
                 "in-service generator at PQ bus folded into load"});
            agg.erase(it);
            continue;
        }
        if (b.kind == BusKind::PV && it == agg.end()) {
            b.kind = BusKind::PQ;
            net.normalizations.push_back(
                {DiagCode::PvBusWithoutGenDemoted, b.id, -1,
                 "PV bus without in-service generator demoted to PQ"});
            continue;
        }
        if (it != agg.end()) {
            b.v_set = it->second.v_set;  // magnitude setpoint comes from the machine
        }
    }
    net.generators.reserve(agg.size());
    for (auto& [bus_id, g] : agg) net.generators.push_back(g);

    net.finalize();

    // fatal structural problems reject the case outright
    auto diags = validate(net);
    for (const auto& d : diags) {
        switch (d.code) {
            case DiagCode::DuplicateBusId:
            case DiagCode::DanglingBranch:
            case DiagCode::NoSlack:
            case DiagCode::ZeroImpedanceBranch:
            case DiagCode::NonPositiveTap:
                throw InvalidTopology(std::string(to_string(d.code)) + ": " + d.message);
            default:
                break;
        }
    }
    return net;
}

Network load_case(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MalformedCase("cannot open case file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_matpower(buf.str());
}

Network scale_loading(const Network& net, double alpha) {
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
        throw InvalidAlpha("loading factor must be finite and > 0, got " +
                           std::to_string(alpha));
    }
    Network scaled = net;
    for (auto& load : scaled.loads) {
        load.p *= alpha;
        load.q *= alpha;
    }
    // Generation setpoints grow with demand so the stress stays distributed the
    // way the dispatch is; the slack and infeasibility currents pick up losses.
    for (auto& gen : scaled.generators) gen.p_set *= alpha;
    scaled.alpha = net.alpha * alpha;
    return scaled;
}

std::vector<Diagnostic> validate(const Network& net) {
    std::vector<Diagnostic> out;
    std::unordered_map<int, int> seen;
    for (const auto& b : net.buses) {
        if (!seen.emplace(b.id, 1).second) {
            out.push_back({DiagCode::DuplicateBusId, b.id, -1,
                           "bus id appears more than once"});
        }
    }
    int slack_count = 0;
    for (const auto& b : net.buses) {
        if (b.kind == BusKind::Slack) ++slack_count;
        if ((b.kind == BusKind::Slack || b.kind == BusKind::PV) && !(b.v_set > 0.0)) {
            out.push_back({DiagCode::BadVoltageSetpoint, b.id, -1,
                           "voltage setpoint must be positive"});
        }
    }
    if (slack_count == 0) {
        out.push_back({DiagCode::NoSlack, -1, -1, "no slack bus"});
    } else if (slack_count > 1) {
        out.push_back({DiagCode::MultipleSlack, -1, -1,
                       std::to_string(slack_count) + " slack buses"});
    }
    for (size_t k = 0; k < net.branches.size(); ++k) {
        const auto& br = net.branches[k];
        int bk = static_cast<int>(k);
        if (!net.has_bus(br.from_bus) || !net.has_bus(br.to_bus)) {
            out.push_back({DiagCode::DanglingBranch, -1, bk,
                           "branch endpoint references unknown bus"});
            continue;
        }
        if (br.in_service && br.r == 0.0 && br.x == 0.0) {
            out.push_back({DiagCode::ZeroImpedanceBranch, -1, bk,
                           "in-service branch with r = x = 0"});
        }
        if (!(br.tap > 0.0)) {
            out.push_back({DiagCode::NonPositiveTap, -1, bk, "tap must be > 0"});
        }
    }
    for (const auto& l : net.loads) {
        if (!std::isfinite(l.p) || !std::isfinite(l.q)) {
            out.push_back({DiagCode::NonFiniteValue, l.bus, -1, "non-finite load"});
        }
    }
    for (const auto& g : net.generators) {
        if (!std::isfinite(g.p_set) || !std::isfinite(g.q_set)) {
            out.push_back({DiagCode::NonFiniteValue, g.bus, -1, "non-finite generator"});
        }
    }

    // connectivity from the slack over in-service branches
    if (slack_count >= 1 && out.empty()) {
        std::vector<std::vector<int>> adj(net.n_bus());
        for (const auto& br : net.branches) {
            if (!br.in_service) continue;
            int f = net.index_of(br.from_bus);
            int t = net.index_of(br.to_bus);
            adj[f].push_back(t);
            adj[t].push_back(f);
        }
        std::vector<char> reach(net.n_bus(), 0);
        std::queue<int> bfs;
        bfs.push(net.slack_index());
        reach[net.slack_index()] = 1;
        while (!bfs.empty()) {
            int u = bfs.front();
            bfs.pop();
            for (int v : adj[u]) {
                if (!reach[v]) {
                    reach[v] = 1;
                    bfs.push(v);
                }
            }
        }
        int stranded = 0;
        int first = -1;
        for (int i = 0; i < net.n_bus(); ++i) {
            if (!reach[i]) {
                ++stranded;
                if (first < 0) first = net.id_of(i);
            }
        }
        if (stranded > 0) {
            out.push_back({DiagCode::IslandDetected, first, -1,
                           std::to_string(stranded) +
                               " buses unreachable from the slack"});
        }
    }
    return out;
}

bool model_equal(const Network& a, const Network& b) {
    return a.base_mva == b.base_mva && a.alpha == b.alpha && a.name == b.name &&
           a.buses == b.buses && a.branches == b.branches &&
           a.generators == b.generators && a.loads == b.loads;
}

}  // namespace infloc::netmodel
