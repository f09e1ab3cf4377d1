#include "infloc/ecf.hpp"

#include <cmath>
#include <complex>

namespace infloc::ecf {

using netmodel::BusKind;
using netmodel::Network;

EcfSystem::EcfSystem(const Network& net) : net_(&net), n_(net.n_bus()) {
    if (n_ == 0) throw InvalidTopology("empty network");

    pv_ordinal_.assign(n_, -1);
    for (int i = 0; i < n_; ++i) {
        const auto& bus = net.buses[i];
        if (bus.kind == BusKind::Slack) {
            if (slack_ >= 0) throw InvalidTopology("more than one slack bus");
            slack_ = i;
            slack_v_ = bus.v_set;
            slack_theta_ = bus.theta_set;
        } else if (bus.kind == BusKind::PV) {
            pv_ordinal_[i] = static_cast<int>(pv_.size());
            pv_.push_back(i);
        }
    }
    if (slack_ < 0) throw InvalidTopology("network has no slack bus");

    load_p_ = Vector::Zero(n_);
    load_q_ = Vector::Zero(n_);
    for (const auto& l : net.loads) {
        int b = net.index_of(l.bus);
        load_p_[b] += l.p;
        load_q_[b] += l.q;
    }

    gen_p_ = Vector::Zero(n_pv());
    gen_q0_ = Vector::Zero(n_pv());
    for (const auto& g : net.generators) {
        int b = net.index_of(g.bus);
        if (b == slack_) {
            slack_p0_ += g.p_set;
            slack_q0_ += g.q_set;
            continue;
        }
        int ord = pv_ordinal_[b];
        if (ord < 0) {
            throw InvalidTopology("in-service generator at PQ bus " +
                                  std::to_string(g.bus));
        }
        gen_p_[ord] += g.p_set;
        gen_q0_[ord] += g.q_set;
    }

    for (int b = 0; b < n_; ++b) {
        if (b == slack_) continue;
        injections_.buses.push_back(b);
        inj_rows_.push_back(kcl_row(b, false));
        inj_rows_.push_back(kcl_row(b, true));
    }

    // bus admittance: pi-model branches with off-nominal tap and phase shift,
    // plus bus shunts
    std::vector<Triplet> gt, bt;
    auto stamp = [&](int row, int col, std::complex<double> y) {
        gt.emplace_back(row, col, y.real());
        bt.emplace_back(row, col, y.imag());
    };
    for (const auto& br : net.branches) {
        if (!br.in_service) continue;
        int f = net.index_of(br.from_bus);
        int t = net.index_of(br.to_bus);
        std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
        std::complex<double> bc(0.0, br.b_charging / 2.0);
        std::complex<double> ratio = std::polar(br.tap, br.shift);
        stamp(f, f, (ys + bc) / (br.tap * br.tap));
        stamp(f, t, -ys / std::conj(ratio));
        stamp(t, f, -ys / ratio);
        stamp(t, t, ys + bc);
    }
    for (int b = 0; b < n_; ++b) {
        const auto& bus = net.buses[b];
        if (bus.shunt_g != 0.0 || bus.shunt_b != 0.0) {
            stamp(b, b, {bus.shunt_g, bus.shunt_b});
        }
    }
    g_bus_.resize(n_, n_);
    b_bus_.resize(n_, n_);
    g_bus_.setFromTriplets(gt.begin(), gt.end());
    b_bus_.setFromTriplets(bt.begin(), bt.end());

    // fixed Jacobian entries: the linear stamps in all four KCL blocks plus
    // the two slack voltage-pinning rows
    linear_triplets_.reserve(4 * static_cast<size_t>(g_bus_.nonZeros()) + 2);
    for (int col = 0; col < n_; ++col) {
        for (SparseMatrix::InnerIterator it(g_bus_, col); it; ++it) {
            int r = static_cast<int>(it.row());
            linear_triplets_.emplace_back(kcl_row(r, false), vr_index(col), it.value());
            linear_triplets_.emplace_back(kcl_row(r, true), vi_index(col), it.value());
        }
        for (SparseMatrix::InnerIterator it(b_bus_, col); it; ++it) {
            int r = static_cast<int>(it.row());
            linear_triplets_.emplace_back(kcl_row(r, false), vi_index(col), -it.value());
            linear_triplets_.emplace_back(kcl_row(r, true), vr_index(col), it.value());
        }
    }
    linear_triplets_.emplace_back(slack_vr_row(), vr_index(slack_), 1.0);
    linear_triplets_.emplace_back(slack_vi_row(), vi_index(slack_), 1.0);
}

StateVector EcfSystem::init_state(InitMode mode) const {
    StateVector x;
    x.values = Vector::Zero(state_dim());
    if (mode == InitMode::Flat) {
        for (int b = 0; b < n_; ++b) {
            double mag = 1.0;
            const auto& bus = net_->buses[b];
            if (bus.kind != BusKind::PQ) mag = bus.v_set;
            x.values[vr_index(b)] = mag;
        }
        x.values[vr_index(slack_)] = slack_v_ * std::cos(slack_theta_);
        x.values[vi_index(slack_)] = slack_v_ * std::sin(slack_theta_);
        return x;
    }
    for (int b = 0; b < n_; ++b) {
        const auto& bus = net_->buses[b];
        x.values[vr_index(b)] = bus.vm0 * std::cos(bus.va0);
        x.values[vi_index(b)] = bus.vm0 * std::sin(bus.va0);
    }
    for (int k = 0; k < n_pv(); ++k) x.values[qg_index(k)] = gen_q0_[k];
    x.values[pg_slack_index()] = slack_p0_;
    x.values[qg_slack_index()] = slack_q0_;
    return x;
}

bool EcfSystem::voltage_ok(const StateVector& x) const {
    constexpr double floor2 = kVoltageFloor * kVoltageFloor;
    for (int b = 0; b < n_; ++b) {
        double vr = x.values[vr_index(b)];
        double vi = x.values[vi_index(b)];
        double m = vr * vr + vi * vi;
        if (!(m >= floor2) || !std::isfinite(m)) return false;
    }
    return true;
}

void EcfSystem::check_voltage(const StateVector& x) const {
    constexpr double floor2 = kVoltageFloor * kVoltageFloor;
    for (int b = 0; b < n_; ++b) {
        double vr = x.values[vr_index(b)];
        double vi = x.values[vi_index(b)];
        double m = vr * vr + vi * vi;
        if (!(m >= floor2) || !std::isfinite(m)) {
            throw VoltageCollapse("voltage magnitude below floor at bus " +
                                      std::to_string(net_->id_of(b)),
                                  net_->id_of(b));
        }
    }
}

Vector EcfSystem::residual(const StateVector& x) const {
    check_voltage(x);
    const Vector vr = x.values.head(n_);
    const Vector vi = x.values.segment(n_, n_);

    Vector r = Vector::Zero(n_eq());
    // linear branch + shunt currents: I = (G + jB)(vr + j vi)
    r.head(n_) = g_bus_ * vr - b_bus_ * vi;
    r.segment(n_, n_) = b_bus_ * vr + g_bus_ * vi;

    // constant-power draw: I_R = (P vr + Q vi)/|V|^2, I_I = (P vi - Q vr)/|V|^2;
    // generators are the negative-power analog
    auto add_pq_draw = [&](int b, double p, double q) {
        double m = vr[b] * vr[b] + vi[b] * vi[b];
        r[kcl_row(b, false)] += (p * vr[b] + q * vi[b]) / m;
        r[kcl_row(b, true)] += (p * vi[b] - q * vr[b]) / m;
    };
    for (int b = 0; b < n_; ++b) {
        if (load_p_[b] != 0.0 || load_q_[b] != 0.0) add_pq_draw(b, load_p_[b], load_q_[b]);
    }
    for (int k = 0; k < n_pv(); ++k) {
        add_pq_draw(pv_[k], -gen_p_[k], -x.values[qg_index(k)]);
    }
    add_pq_draw(slack_, -x.values[pg_slack_index()], -x.values[qg_slack_index()]);

    for (int k = 0; k < n_pv(); ++k) {
        int b = pv_[k];
        double vset = net_->buses[b].v_set;
        r[pv_row(k)] = vr[b] * vr[b] + vi[b] * vi[b] - vset * vset;
    }
    r[slack_vr_row()] = vr[slack_] - slack_v_ * std::cos(slack_theta_);
    r[slack_vi_row()] = vi[slack_] - slack_v_ * std::sin(slack_theta_);
    return r;
}

SparseMatrix EcfSystem::jacobian(const StateVector& x) const {
    check_voltage(x);
    std::vector<Triplet> trip = linear_triplets_;
    trip.reserve(trip.size() + 8 * n_ + 10 * pv_.size() + 12);

    auto vr_at = [&](int b) { return x.values[vr_index(b)]; };
    auto vi_at = [&](int b) { return x.values[vi_index(b)]; };

    // d/dv of the constant-power draw terms; a = vr/m, b = vi/m with m = |V|^2
    auto stamp_pq = [&](int b, double p, double q) {
        double vr = vr_at(b), vi = vi_at(b);
        double m = vr * vr + vi * vi;
        double m2 = m * m;
        double a_r = (vi * vi - vr * vr) / m2;
        double a_i = -2.0 * vr * vi / m2;
        double b_r = a_i;
        double b_i = (vr * vr - vi * vi) / m2;
        int rowR = kcl_row(b, false), rowI = kcl_row(b, true);
        trip.emplace_back(rowR, vr_index(b), p * a_r + q * b_r);
        trip.emplace_back(rowR, vi_index(b), p * a_i + q * b_i);
        trip.emplace_back(rowI, vr_index(b), p * b_r - q * a_r);
        trip.emplace_back(rowI, vi_index(b), p * b_i - q * a_i);
    };
    for (int b = 0; b < n_; ++b) stamp_pq(b, load_p_[b], load_q_[b]);
    for (int k = 0; k < n_pv(); ++k) {
        int b = pv_[k];
        stamp_pq(b, -gen_p_[k], -x.values[qg_index(k)]);
        double m = vr_at(b) * vr_at(b) + vi_at(b) * vi_at(b);
        trip.emplace_back(kcl_row(b, false), qg_index(k), -vi_at(b) / m);
        trip.emplace_back(kcl_row(b, true), qg_index(k), vr_at(b) / m);
    }
    {
        int b = slack_;
        stamp_pq(b, -x.values[pg_slack_index()], -x.values[qg_slack_index()]);
        double m = vr_at(b) * vr_at(b) + vi_at(b) * vi_at(b);
        trip.emplace_back(kcl_row(b, false), pg_slack_index(), -vr_at(b) / m);
        trip.emplace_back(kcl_row(b, true), pg_slack_index(), -vi_at(b) / m);
        trip.emplace_back(kcl_row(b, false), qg_slack_index(), -vi_at(b) / m);
        trip.emplace_back(kcl_row(b, true), qg_slack_index(), vr_at(b) / m);
    }
    for (int k = 0; k < n_pv(); ++k) {
        int b = pv_[k];
        trip.emplace_back(pv_row(k), vr_index(b), 2.0 * vr_at(b));
        trip.emplace_back(pv_row(k), vi_index(b), 2.0 * vi_at(b));
    }

    SparseMatrix jac(n_eq(), state_dim());
    jac.setFromTriplets(trip.begin(), trip.end());
    return jac;
}

SparseMatrix EcfSystem::hessian_lagrangian(const StateVector& x,
                                           const Vector& lambda) const {
    check_voltage(x);
    std::vector<Triplet> trip;
    trip.reserve(12 * n_ + 20 * pv_.size() + 24);

    auto vr_at = [&](int b) { return x.values[vr_index(b)]; };
    auto vi_at = [&](int b) { return x.values[vi_index(b)]; };

    // second derivatives of a = vr/m and b = vi/m (m = |V|^2); both harmonic
    struct PointGeom {
        double a_r, a_i, b_r, b_i;
        double a_rr, a_ri, a_ii, b_rr, b_ri, b_ii;
    };
    auto geom = [&](int b) {
        double vr = vr_at(b), vi = vi_at(b);
        double m = vr * vr + vi * vi;
        double m2 = m * m, m3 = m2 * m;
        PointGeom g;
        g.a_r = (vi * vi - vr * vr) / m2;
        g.a_i = -2.0 * vr * vi / m2;
        g.b_r = g.a_i;
        g.b_i = -g.a_r;
        g.a_rr = 2.0 * vr * (vr * vr - 3.0 * vi * vi) / m3;
        g.a_ri = 2.0 * vi * (3.0 * vr * vr - vi * vi) / m3;
        g.a_ii = -g.a_rr;
        g.b_rr = g.a_ri;
        g.b_ri = 2.0 * vr * (3.0 * vi * vi - vr * vr) / m3;
        g.b_ii = -g.a_ri;
        return g;
    };

    // rows (f_R, f_I) = (P a + Q b, P b - Q a) carry weights (lR, lI)
    auto stamp_vv = [&](int b, double p, double q, const PointGeom& g) {
        double lR = lambda[kcl_row(b, false)];
        double lI = lambda[kcl_row(b, true)];
        double h_rr = lR * (p * g.a_rr + q * g.b_rr) + lI * (p * g.b_rr - q * g.a_rr);
        double h_ri = lR * (p * g.a_ri + q * g.b_ri) + lI * (p * g.b_ri - q * g.a_ri);
        double h_ii = lR * (p * g.a_ii + q * g.b_ii) + lI * (p * g.b_ii - q * g.a_ii);
        trip.emplace_back(vr_index(b), vr_index(b), h_rr);
        trip.emplace_back(vr_index(b), vi_index(b), h_ri);
        trip.emplace_back(vi_index(b), vr_index(b), h_ri);
        trip.emplace_back(vi_index(b), vi_index(b), h_ii);
    };
    // cross terms with a power variable: column P carries (-a, -b), column Q
    // carries (-b, +a) in the (f_R, f_I) generator rows
    auto stamp_cross = [&](int b, int var, double wr, double wi_r, double wr_i,
                           double wi_i) {
        double lR = lambda[kcl_row(b, false)];
        double lI = lambda[kcl_row(b, true)];
        double hvr = lR * wr + lI * wr_i;
        double hvi = lR * wi_r + lI * wi_i;
        trip.emplace_back(var, vr_index(b), hvr);
        trip.emplace_back(var, vi_index(b), hvi);
        trip.emplace_back(vr_index(b), var, hvr);
        trip.emplace_back(vi_index(b), var, hvi);
    };

    for (int b = 0; b < n_; ++b) {
        if (load_p_[b] == 0.0 && load_q_[b] == 0.0) continue;
        stamp_vv(b, load_p_[b], load_q_[b], geom(b));
    }
    for (int k = 0; k < n_pv(); ++k) {
        int b = pv_[k];
        PointGeom g = geom(b);
        stamp_vv(b, -gen_p_[k], -x.values[qg_index(k)], g);
        stamp_cross(b, qg_index(k), -g.b_r, -g.b_i, g.a_r, g.a_i);
    }
    {
        int b = slack_;
        PointGeom g = geom(b);
        stamp_vv(b, -x.values[pg_slack_index()], -x.values[qg_slack_index()], g);
        stamp_cross(b, pg_slack_index(), -g.a_r, -g.a_i, -g.b_r, -g.b_i);
        stamp_cross(b, qg_slack_index(), -g.b_r, -g.b_i, g.a_r, g.a_i);
    }
    for (int k = 0; k < n_pv(); ++k) {
        int b = pv_[k];
        double l = lambda[pv_row(k)];
        trip.emplace_back(vr_index(b), vr_index(b), 2.0 * l);
        trip.emplace_back(vi_index(b), vi_index(b), 2.0 * l);
    }

    SparseMatrix h(state_dim(), state_dim());
    h.setFromTriplets(trip.begin(), trip.end());
    return h;
}

}  // namespace infloc::ecf
