#pragma once

/**
 * Surrogate model of a 16-stage counter-current uranium extraction and
 * scrubbing cascade (mixer-settler train, two transferable species).
 *
 * Each stage is a mixer-settler pair. The aqueous phase flows from stage 16
 * down to stage 1 (scrub solution enters stage 16, the raffinate leaves
 * stage 1); the organic phase flows from stage 1 up to stage 16 (fresh
 * solvent enters stage 1, loaded solvent leaves stage 16). The aqueous feed
 * (uranium + nitric acid) enters the feed-stage mixer, splitting the train
 * into extraction stages (1..feed_stage) and scrub stages (feed_stage+1..16).
 *
 * Mixers exchange mass between the phases through a rate law that relaxes
 * the organic concentration toward a local equilibrium
 *     [U]org* = D_U [U]aq,   D_U = K_U [TBP]free^2 [NO3]^2
 *     [H]org* = D_H [H]aq,   D_H = K_H [TBP]free
 * with [TBP]free = max(0, TBP_total - 2 [U]org - [H]org) and
 * [NO3] = [H]aq + 2 [U]aq. The quadratic TBP dependence saturates the
 * solvent: above a critical feed flow the free-TBP pool collapses stage by
 * stage and uranium breaks through into the raffinate. Settlers are pure
 * well-mixed transport lags.
 *
 * The state is a flat vector of 128 concentrations (mol/L) in eight blocks
 * of 16 (one entry per stage): aqueous-U mixers, aqueous-U settlers,
 * organic-U mixers, organic-U settlers, then the same four blocks for acid.
 * The measured plant output is the stage-9 settler aqueous uranium
 * concentration (the first scrub stage); the raffinate purity constraint
 * watches the stage-1 settler aqueous uranium concentration.
 */

#include <array>
#include <stdexcept>
#include <vector>

namespace solvex {

inline constexpr int kStages = 16;
inline constexpr int kStateSize = 8 * kStages;

// Block offsets into the state vector.
inline constexpr int kAqUMixer = 0 * kStages;
inline constexpr int kAqUSettler = 1 * kStages;
inline constexpr int kOrgUMixer = 2 * kStages;
inline constexpr int kOrgUSettler = 3 * kStages;
inline constexpr int kAqHMixer = 4 * kStages;
inline constexpr int kAqHSettler = 5 * kStages;
inline constexpr int kOrgHMixer = 6 * kStages;
inline constexpr int kOrgHSettler = 7 * kStages;

/// Index of the measured output (stage-9 settler, aqueous uranium).
inline constexpr int kOutputIndex = kAqUSettler + 8;
/// Index of the raffinate uranium concentration (stage-1 settler, aqueous).
inline constexpr int kRaffinateIndex = kAqUSettler + 0;

struct CascadeState {
  std::array<double, kStateSize> c{};  // concentrations, mol/L

  // Stage arguments are 1-based throughout.
  double& aq_u_mixer(int stage) { return c[kAqUMixer + stage - 1]; }
  double& aq_u_settler(int stage) { return c[kAqUSettler + stage - 1]; }
  double& org_u_mixer(int stage) { return c[kOrgUMixer + stage - 1]; }
  double& org_u_settler(int stage) { return c[kOrgUSettler + stage - 1]; }
  double& aq_h_mixer(int stage) { return c[kAqHMixer + stage - 1]; }
  double& aq_h_settler(int stage) { return c[kAqHSettler + stage - 1]; }
  double& org_h_mixer(int stage) { return c[kOrgHMixer + stage - 1]; }
  double& org_h_settler(int stage) { return c[kOrgHSettler + stage - 1]; }
  double aq_u_mixer(int stage) const { return c[kAqUMixer + stage - 1]; }
  double aq_u_settler(int stage) const { return c[kAqUSettler + stage - 1]; }
  double org_u_mixer(int stage) const { return c[kOrgUMixer + stage - 1]; }
  double org_u_settler(int stage) const { return c[kOrgUSettler + stage - 1]; }
  double aq_h_mixer(int stage) const { return c[kAqHMixer + stage - 1]; }
  double aq_h_settler(int stage) const { return c[kAqHSettler + stage - 1]; }
  double org_h_mixer(int stage) const { return c[kOrgHMixer + stage - 1]; }
  double org_h_settler(int stage) const { return c[kOrgHSettler + stage - 1]; }
};

struct CascadeParams {
  int feed_stage = 8;              // extraction stages 1..8, scrub 9..16
  double mixer_aq_volume = 1.0;    // L, aqueous holdup per mixer
  double mixer_org_volume = 0.6;   // L, organic holdup per mixer
  double settler_aq_volume = 2.0;  // L, aqueous holdup per settler
  double settler_org_volume = 1.2; // L, organic holdup per settler
  double k_la = 15.0;              // 1/h, interphase mass-transfer rate
  double tbp_total = 1.1;          // mol/L, extractant concentration (30% TBP)
  double k_u = 1.5;                // uranium distribution constant
  double k_h = 0.2;                // acid distribution constant
  double scrub_flow = 8.0;         // L/h, scrub solution flow
  double scrub_acid = 1.5;         // mol/L, scrub solution acidity
  double feed_u = 1.05;            // mol/L uranium in the feed (~250 g/L)
  double feed_h = 3.0;             // mol/L nitric acid in the feed
  double nominal_solvent_flow = 30.0;  // L/h, nominal organic flow (the
                                       // parameter the estimator adapts)
  double feed_flow_min = 2.0;      // L/h, actuator range for the feed flow
  double feed_flow_max = 10.0;
  double substep_h = 0.01;         // h, fixed RK4 substep

  /// Throws std::invalid_argument on non-physical settings.
  void validate() const;
};

/// Instantaneous boundary flow rates (mol/h) or, when produced by step(),
/// their time integrals over the step (mol).
struct BoundaryFlux {
  double u_in = 0.0;
  double u_out = 0.0;
  double h_in = 0.0;
  double h_out = 0.0;
};

struct SteadyStateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class CascadeModel {
 public:
  explicit CascadeModel(CascadeParams params);

  const CascadeParams& params() const { return params_; }

  /// Time derivative of the full state for feed flow u and the given organic
  /// solvent flow (both L/h). Throws std::invalid_argument on negative
  /// flows. When `flux` is non-null the instantaneous boundary flow rates
  /// are reported alongside.
  void derivative(const CascadeState& x, double u, double solvent_flow,
                  std::array<double, kStateSize>& dxdt,
                  BoundaryFlux* flux = nullptr) const;

  /// Advance the state by dt_h hours with fixed-substep RK4 and a
  /// positivity / solvent-capacity projection after every substep. Returns
  /// false (leaving x untouched) if the integration produced a non-finite
  /// state. When `integrated_flux` is non-null the boundary fluxes are
  /// accumulated through the same quadrature, so the inventory balance
  /// d(inventory) = in - out holds to integrator precision.
  bool step(CascadeState& x, double u, double solvent_flow, double dt_h,
            BoundaryFlux* integrated_flux = nullptr) const;

  double output(const CascadeState& x) const { return x.c[kOutputIndex]; }
  double raffinate(const CascadeState& x) const { return x.c[kRaffinateIndex]; }

  /// March to the steady state for constant inputs, starting from
  /// `warm_start` when given (an all-zero cascade otherwise). Converged when
  /// max |dc/dt| <= residual_tol; throws SteadyStateError when the time
  /// budget runs out first.
  CascadeState steady_state(double u, double solvent_flow,
                            const CascadeState* warm_start = nullptr,
                            double residual_tol = 1e-9,
                            double max_hours = 4000.0) const;

  /// Total uranium / acid in the cascade, mol.
  double uranium_inventory(const CascadeState& x) const;
  double acid_inventory(const CascadeState& x) const;

 private:
  CascadeParams params_;
};

struct SaturationPoint {
  double u = 0.0;
  double y_steady = 0.0;
  double raffinate = 0.0;
  bool converged = false;
};

/// Steady-state sweep of the feed flow at fixed solvent flow; points whose
/// steady solve failed are reported with converged = false. Consecutive
/// points warm-start from their neighbor.
std::vector<SaturationPoint> saturation_curve(const CascadeModel& model,
                                              double solvent_flow,
                                              double u_min, double u_max,
                                              int n_points);

}  // namespace solvex
