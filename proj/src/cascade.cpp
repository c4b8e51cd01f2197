#include "solvex/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace solvex {

void CascadeParams::validate() const {
  if (feed_stage < 1 || feed_stage > kStages) {
    throw std::invalid_argument("CascadeParams: feed_stage outside 1..16");
  }
  const double volumes[] = {mixer_aq_volume, mixer_org_volume,
                            settler_aq_volume, settler_org_volume};
  for (double v : volumes) {
    if (!(v > 0.0)) throw std::invalid_argument("CascadeParams: holdup volume <= 0");
  }
  if (!(k_la > 0.0) || !(tbp_total > 0.0) || !(k_u > 0.0) || !(k_h > 0.0)) {
    throw std::invalid_argument("CascadeParams: rate/equilibrium constant <= 0");
  }
  if (!(scrub_flow > 0.0) || scrub_acid < 0.0 || feed_u < 0.0 || feed_h < 0.0) {
    throw std::invalid_argument("CascadeParams: negative stream spec");
  }
  if (!(nominal_solvent_flow > 0.0)) {
    throw std::invalid_argument("CascadeParams: nominal_solvent_flow <= 0");
  }
  if (!(feed_flow_min >= 0.0) || !(feed_flow_max > feed_flow_min)) {
    throw std::invalid_argument("CascadeParams: bad feed flow range");
  }
  if (!(substep_h > 0.0)) {
    throw std::invalid_argument("CascadeParams: substep_h <= 0");
  }
}

CascadeModel::CascadeModel(CascadeParams params) : params_(params) {
  params_.validate();
}

void CascadeModel::derivative(const CascadeState& x, double u,
                              double solvent_flow,
                              std::array<double, kStateSize>& dxdt,
                              BoundaryFlux* flux) const {
  if (u < 0.0 || solvent_flow < 0.0) {
    std::ostringstream oss;
    oss << "CascadeModel: negative flow (feed " << u << ", solvent "
        << solvent_flow << ")";
    throw std::invalid_argument(oss.str());
  }

  const CascadeParams& p = params_;
  const double* c = x.c.data();
  double* d = dxdt.data();

  const double q_org = solvent_flow;
  const double inv_vma = 1.0 / p.mixer_aq_volume;
  const double inv_vmo = 1.0 / p.mixer_org_volume;
  const double inv_vsa = 1.0 / p.settler_aq_volume;
  const double inv_vso = 1.0 / p.settler_org_volume;

  for (int s = 0; s < kStages; ++s) {  // s is 0-based, stage = s + 1
    const int stage = s + 1;
    // Aqueous flow leaving this stage: scrub only above the feed stage,
    // scrub + feed at and below it.
    const double qa_out = stage <= p.feed_stage ? p.scrub_flow + u : p.scrub_flow;

    const double am = c[kAqUMixer + s];
    const double as = c[kAqUSettler + s];
    const double om = c[kOrgUMixer + s];
    const double os = c[kOrgUSettler + s];
    const double hm = c[kAqHMixer + s];
    const double hs = c[kAqHSettler + s];
    const double gm = c[kOrgHMixer + s];
    const double gs = c[kOrgHSettler + s];

    // Aqueous into this mixer: the settler above, or the scrub stream at the
    // top stage, plus the feed at the feed stage.
    double aq_u_in, aq_h_in;
    if (stage == kStages) {
      aq_u_in = 0.0;
      aq_h_in = p.scrub_flow * p.scrub_acid;
    } else {
      const double qa_above =
          stage + 1 <= p.feed_stage ? p.scrub_flow + u : p.scrub_flow;
      aq_u_in = qa_above * c[kAqUSettler + s + 1];
      aq_h_in = qa_above * c[kAqHSettler + s + 1];
    }
    if (stage == p.feed_stage) {
      aq_u_in += u * p.feed_u;
      aq_h_in += u * p.feed_h;
    }

    // Organic into this mixer: the settler below, or fresh solvent at the
    // bottom stage.
    const double org_u_in = stage == 1 ? 0.0 : c[kOrgUSettler + s - 1];
    const double org_h_in = stage == 1 ? 0.0 : c[kOrgHSettler + s - 1];

    // Local equilibrium and transfer rates (mol/h, aqueous -> organic).
    const double tbp_free =
        std::max(0.0, p.tbp_total - 2.0 * om - gm);
    const double no3 = hm + 2.0 * am;
    const double d_u = p.k_u * tbp_free * tbp_free * no3 * no3;
    const double d_h = p.k_h * tbp_free;
    const double transfer_u = p.k_la * p.mixer_org_volume * (d_u * am - om);
    const double transfer_h = p.k_la * p.mixer_org_volume * (d_h * hm - gm);

    d[kAqUMixer + s] = (aq_u_in - qa_out * am - transfer_u) * inv_vma;
    d[kOrgUMixer + s] = (q_org * (org_u_in - om) + transfer_u) * inv_vmo;
    d[kAqUSettler + s] = qa_out * (am - as) * inv_vsa;
    d[kOrgUSettler + s] = q_org * (om - os) * inv_vso;

    d[kAqHMixer + s] = (aq_h_in - qa_out * hm - transfer_h) * inv_vma;
    d[kOrgHMixer + s] = (q_org * (org_h_in - gm) + transfer_h) * inv_vmo;
    d[kAqHSettler + s] = qa_out * (hm - hs) * inv_vsa;
    d[kOrgHSettler + s] = q_org * (gm - gs) * inv_vso;
  }

  if (flux != nullptr) {
    const double qa_bottom = p.scrub_flow + u;
    flux->u_in = u * p.feed_u;
    flux->h_in = u * p.feed_h + p.scrub_flow * p.scrub_acid;
    flux->u_out = qa_bottom * c[kAqUSettler + 0] + q_org * c[kOrgUSettler + kStages - 1];
    flux->h_out = qa_bottom * c[kAqHSettler + 0] + q_org * c[kOrgHSettler + kStages - 1];
  }
}

namespace {

/// Clamp tiny integrator undershoots to zero and keep the organic loading
/// within the extractant capacity (scales the organic pair down if a substep
/// overshot 2[U]org + [H]org past TBP_total).
void project_state(CascadeState& x, const CascadeParams& p) {
  for (double& v : x.c) {
    if (v < 0.0) v = 0.0;
  }
  for (int s = 0; s < kStages; ++s) {
    for (int block : {kOrgUMixer, kOrgUSettler}) {
      const int h_block = block == kOrgUMixer ? kOrgHMixer : kOrgHSettler;
      double& u_org = x.c[block + s];
      double& h_org = x.c[h_block + s];
      const double load = 2.0 * u_org + h_org;
      if (load > p.tbp_total) {
        const double scale = p.tbp_total / load;
        u_org *= scale;
        h_org *= scale;
      }
    }
  }
}

}  // namespace

bool CascadeModel::step(CascadeState& x, double u, double solvent_flow,
                        double dt_h, BoundaryFlux* integrated_flux) const {
  const int n_sub = std::max(1, static_cast<int>(std::lround(dt_h / params_.substep_h)));
  const double h = dt_h / n_sub;

  CascadeState work = x;
  BoundaryFlux acc;
  std::array<double, kStateSize> k1, k2, k3, k4;
  CascadeState tmp;

  for (int sub = 0; sub < n_sub; ++sub) {
    BoundaryFlux f1, f2, f3, f4;
    derivative(work, u, solvent_flow, k1, integrated_flux ? &f1 : nullptr);
    for (int j = 0; j < kStateSize; ++j) tmp.c[j] = work.c[j] + 0.5 * h * k1[j];
    derivative(tmp, u, solvent_flow, k2, integrated_flux ? &f2 : nullptr);
    for (int j = 0; j < kStateSize; ++j) tmp.c[j] = work.c[j] + 0.5 * h * k2[j];
    derivative(tmp, u, solvent_flow, k3, integrated_flux ? &f3 : nullptr);
    for (int j = 0; j < kStateSize; ++j) tmp.c[j] = work.c[j] + h * k3[j];
    derivative(tmp, u, solvent_flow, k4, integrated_flux ? &f4 : nullptr);
    for (int j = 0; j < kStateSize; ++j) {
      work.c[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    if (integrated_flux) {
      acc.u_in += h / 6.0 * (f1.u_in + 2.0 * f2.u_in + 2.0 * f3.u_in + f4.u_in);
      acc.u_out += h / 6.0 * (f1.u_out + 2.0 * f2.u_out + 2.0 * f3.u_out + f4.u_out);
      acc.h_in += h / 6.0 * (f1.h_in + 2.0 * f2.h_in + 2.0 * f3.h_in + f4.h_in);
      acc.h_out += h / 6.0 * (f1.h_out + 2.0 * f2.h_out + 2.0 * f3.h_out + f4.h_out);
    }
    project_state(work, params_);
  }

  for (double v : work.c) {
    if (!std::isfinite(v)) return false;
  }
  x = work;
  if (integrated_flux) *integrated_flux = acc;
  return true;
}

CascadeState CascadeModel::steady_state(double u, double solvent_flow,
                                        const CascadeState* warm_start,
                                        double residual_tol,
                                        double max_hours) const {
  CascadeState x = warm_start ? *warm_start : CascadeState{};
  std::array<double, kStateSize> dxdt;

  const double chunk_h = 0.5;
  const int max_chunks = static_cast<int>(max_hours / chunk_h);
  for (int chunk = 0; chunk < max_chunks; ++chunk) {
    if (!step(x, u, solvent_flow, chunk_h)) {
      throw SteadyStateError("steady_state: integration diverged");
    }
    derivative(x, u, solvent_flow, dxdt);
    double residual = 0.0;
    for (double v : dxdt) residual = std::max(residual, std::abs(v));
    if (residual <= residual_tol) return x;
  }
  std::ostringstream oss;
  oss << "steady_state: residual tolerance " << residual_tol
      << " not reached within " << max_hours << " h (u = " << u
      << ", solvent = " << solvent_flow << ")";
  throw SteadyStateError(oss.str());
}

double CascadeModel::uranium_inventory(const CascadeState& x) const {
  const CascadeParams& p = params_;
  double mixer_aq = 0.0, settler_aq = 0.0, mixer_org = 0.0, settler_org = 0.0;
  for (int s = 0; s < kStages; ++s) {
    mixer_aq += x.c[kAqUMixer + s];
    settler_aq += x.c[kAqUSettler + s];
    mixer_org += x.c[kOrgUMixer + s];
    settler_org += x.c[kOrgUSettler + s];
  }
  return mixer_aq * p.mixer_aq_volume + settler_aq * p.settler_aq_volume +
         mixer_org * p.mixer_org_volume + settler_org * p.settler_org_volume;
}

double CascadeModel::acid_inventory(const CascadeState& x) const {
  const CascadeParams& p = params_;
  double mixer_aq = 0.0, settler_aq = 0.0, mixer_org = 0.0, settler_org = 0.0;
  for (int s = 0; s < kStages; ++s) {
    mixer_aq += x.c[kAqHMixer + s];
    settler_aq += x.c[kAqHSettler + s];
    mixer_org += x.c[kOrgHMixer + s];
    settler_org += x.c[kOrgHSettler + s];
  }
  return mixer_aq * p.mixer_aq_volume + settler_aq * p.settler_aq_volume +
         mixer_org * p.mixer_org_volume + settler_org * p.settler_org_volume;
}

std::vector<SaturationPoint> saturation_curve(const CascadeModel& model,
                                              double solvent_flow,
                                              double u_min, double u_max,
                                              int n_points) {
  if (n_points < 2 || !(u_max > u_min)) {
    throw std::invalid_argument("saturation_curve: need u_max > u_min and >= 2 points");
  }
  std::vector<SaturationPoint> curve;
  curve.reserve(n_points);
  const CascadeState* warm = nullptr;
  CascadeState last;
  for (int i = 0; i < n_points; ++i) {
    const double u = u_min + (u_max - u_min) * i / (n_points - 1);
    SaturationPoint pt;
    pt.u = u;
    try {
      last = model.steady_state(u, solvent_flow, warm);
      pt.y_steady = model.output(last);
      pt.raffinate = model.raffinate(last);
      pt.converged = true;
      warm = &last;
    } catch (const SteadyStateError&) {
      pt.y_steady = std::nan("");
      pt.raffinate = std::nan("");
      pt.converged = false;
    }
    curve.push_back(pt);
  }
  return curve;
}

}  // namespace solvex
