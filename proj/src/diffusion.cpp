#include "invasion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

#include "invasion/calendar.hpp"
#include "invasion/errors.hpp"
#include "invasion/raster_io.hpp"

namespace invasion {

namespace {

// Subnormal arithmetic is very slow on x86; solves run with flush-to-zero
// and denormals-are-zero set, restoring the caller's mode afterwards.
#if defined(__SSE2__)
class FlushDenormals {
 public:
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~FlushDenormals() { _mm_setcsr(saved_); }
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
  unsigned saved_;
};
#else
struct FlushDenormals {};
#endif

constexpr double kOverflow = 1e300;
constexpr int kMaxHalvings = 40;

std::vector<double> linear_predictor(double intercept, std::span<const double> coef,
                                     std::span<const std::string> layers,
                                     const CovariateRaster& covariates) {
  if (coef.size() != layers.size()) {
    throw ConfigurationError("got " + std::to_string(coef.size()) + " coefficients for " +
                             std::to_string(layers.size()) + " covariate layers");
  }
  const GridSpec& grid = covariates.grid();
  std::vector<const std::vector<double>*> cols;
  for (const auto& name : layers) cols.push_back(&covariates.layer(name));
  std::vector<double> eta(grid.fine_count(), 0.0);
  for (std::size_t i = 0; i < eta.size(); ++i) {
    if (!grid.inside(i)) continue;
    double v = intercept;
    for (std::size_t k = 0; k < cols.size(); ++k) v += (*cols[k])[i] * coef[k];
    eta[i] = v;
  }
  return eta;
}

}  // namespace

namespace detail {

// Explicit step on a grid padded with a ring of zero cells:
// out = self .* in + neigh .* (sum of the four neighbours). Inactive and
// padding cells have self = neigh = 0, so they stay zero without branching.
class PaddedKernel {
 public:
  PaddedKernel() = default;
  PaddedKernel(int rows, int cols, const std::vector<double>& self,
               const std::vector<double>& neigh, const std::vector<std::uint8_t>& active)
      : rows_(rows), cols_(cols), width_(cols + 2) {
    const std::size_t n = static_cast<std::size_t>(rows + 2) * width_;
    self_.assign(n, 0.0);
    neigh_.assign(n, 0.0);
    cur_.assign(n, 0.0);
    next_.assign(n, 0.0);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const std::size_t k = static_cast<std::size_t>(r) * cols + c;
        if (!active[k]) continue;
        self_[padded(r, c)] = self[k];
        neigh_[padded(r, c)] = neigh[k];
      }
    }
  }

  void load(const std::vector<double>& c) {
    for (int r = 0; r < rows_; ++r)
      for (int col = 0; col < cols_; ++col)
        cur_[padded(r, col)] = c[static_cast<std::size_t>(r) * cols_ + col];
  }
  void store(std::vector<double>& c) const {
    c.resize(static_cast<std::size_t>(rows_) * cols_);
    for (int r = 0; r < rows_; ++r)
      for (int col = 0; col < cols_; ++col)
        c[static_cast<std::size_t>(r) * cols_ + col] = cur_[padded(r, col)];
  }

  void step() {
    // One flat pass over the interior rows; padding columns have zero
    // coefficients and so stay zero.
    const std::size_t w = width_;
    const double* in = cur_.data();
    const double* a = self_.data();
    const double* b = neigh_.data();
    double* out = next_.data();
    const std::size_t lo = w;
    const std::size_t hi = static_cast<std::size_t>(rows_ + 1) * w;
    for (std::size_t i = lo; i < hi; ++i) {
      const double v = a[i] * in[i] + b[i] * ((in[i - 1] + in[i + 1]) + (in[i - w] + in[i + w]));
      out[i] = v;
    }
    cur_.swap(next_);
  }

 private:
  std::size_t padded(int r, int c) const {
    return static_cast<std::size_t>(r + 1) * width_ + static_cast<std::size_t>(c + 1);
  }

  int rows_ = 0;
  int cols_ = 0;
  std::size_t width_ = 0;
  std::vector<double> self_;
  std::vector<double> neigh_;
  std::vector<double> cur_;
  std::vector<double> next_;
};

}  // namespace detail

namespace {

using detail::PaddedKernel;

void check_finite(const std::vector<double>& v, long step) {
  for (double x : v) {
    if (!std::isfinite(x) || std::abs(x) > kOverflow) {
      throw NumericalBlowup("numerical blowup at step " + std::to_string(step), step);
    }
  }
}

double snap(double t, int steps_per_month) {
  return std::round(t * steps_per_month) / steps_per_month;
}

double common_t0(std::span<const IntroductionEvent> events) {
  if (events.empty()) throw ConfigurationError("at least one introduction event is required");
  for (const auto& e : events) {
    if (e.t0 != events.front().t0) {
      throw ConfigurationError("introduction events must share a single t0");
    }
    if (!(e.theta > 0.0)) throw DomainError("introduction mass theta must be positive");
  }
  return events.front().t0;
}

struct CoarseOperator {
  std::vector<double> self;
  std::vector<double> neigh;
  std::vector<std::uint8_t> active;
};

CoarseOperator coarse_operator(const RateFields& rates, const GridSpec& grid, double dt) {
  const double h2 = grid.coarse_size() * grid.coarse_size();
  const auto& counts = grid.coarse_masked_counts();
  CoarseOperator op;
  op.self.assign(grid.coarse_count(), 0.0);
  op.neigh.assign(grid.coarse_count(), 0.0);
  op.active.assign(grid.coarse_count(), 0);
  for (std::size_t k = 0; k < grid.coarse_count(); ++k) {
    if (counts[k] == 0) continue;
    const double a = dt * rates.homogenized.mu_bar[k] / h2;
    op.active[k] = 1;
    op.neigh[k] = a;
    op.self[k] = 1.0 + dt * rates.homogenized.lambda_bar[k] - 4.0 * a;
  }
  return op;
}

// Sub-steps per month for the effective dt.
int substeps(double dt) { return static_cast<int>(std::lround(1.0 / dt)); }

struct FrameSchedule {
  long total_steps = 0;
  long frame_every = 0;
};

FrameSchedule schedule(double t_start, double t_end, double dt, int stride_months) {
  if (t_end < t_start) throw ConfigurationError("t_end precedes the introduction date");
  if (stride_months < 1) throw ConfigurationError("frame stride must be at least one month");
  FrameSchedule s;
  s.total_steps = std::lround((t_end - t_start) / dt);
  s.frame_every = std::lround(stride_months / dt);
  return s;
}

}  // namespace

RateFields make_rate_fields(const GridSpec& grid, std::vector<double> mu,
                            std::vector<double> lambda) {
  RateFields r;
  r.homogenized = homogenize(mu, lambda, grid);
  r.mu = std::move(mu);
  r.lambda = std::move(lambda);
  return r;
}

std::vector<double> diffusion_field(double alpha0, std::span<const double> alpha,
                                    std::span<const std::string> layers,
                                    const CovariateRaster& covariates) {
  auto eta = linear_predictor(alpha0, alpha, layers, covariates);
  const GridSpec& grid = covariates.grid();
  for (std::size_t i = 0; i < eta.size(); ++i) eta[i] = grid.inside(i) ? std::exp(eta[i]) : 0.0;
  return eta;
}

std::vector<double> growth_field(double gamma0, std::span<const double> gamma,
                                 std::span<const std::string> layers,
                                 const CovariateRaster& covariates) {
  return linear_predictor(gamma0, gamma, layers, covariates);
}

std::size_t IntensityTrajectory::nearest_frame(double month) const {
  constexpr double eps = 1e-9;
  if (frame_times.empty() || month < t_start - eps || month > t_end + eps) {
    throw CoverageError("date " + std::to_string(month) + " outside solved window [" +
                        std::to_string(t_start) + ", " + std::to_string(t_end) + "]");
  }
  auto it = std::lower_bound(frame_times.begin(), frame_times.end(), month - eps);
  std::size_t k = static_cast<std::size_t>(it - frame_times.begin());
  if (k == frame_times.size()) return k - 1;
  if (k > 0 && month - frame_times[k - 1] <= frame_times[k] - month) return k - 1;
  return k;
}

double IntensityTrajectory::intensity_at(const Point& p, double month) const {
  auto cell = grid.locate_masked(p);
  if (!cell) throw DomainError("location outside the study-area mask");
  return frames[nearest_frame(month)][*cell];
}

std::vector<double> initialize_intensity(std::span<const IntroductionEvent> events,
                                         const RateFields& rates, const GridSpec& grid) {
  common_t0(events);
  std::vector<double> cbar(grid.coarse_count(), 0.0);
  const auto& counts = grid.coarse_masked_counts();
  for (const auto& e : events) {
    auto cell = grid.locate_masked(e.omega);
    if (!cell) throw DomainError("introduction location outside the study-area mask");
    std::size_t k = grid.coarse_of(*cell);
    double area = counts[k] * grid.fine_cell_area();
    cbar[k] += e.theta * rates.homogenized.mu_bar[k] / area;
  }
  return cbar;
}

std::vector<double> downscale_intensity(std::span<const double> cbar, const RateFields& rates,
                                        const GridSpec& grid) {
  if (cbar.size() != grid.coarse_count()) throw ConfigurationError("coarse state size mismatch");
  std::vector<double> u(grid.fine_count(), 0.0);
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (grid.inside(i)) u[i] = cbar[grid.coarse_of(i)] / rates.mu[i];
  }
  return u;
}

double integrate_intensity(std::span<const double> u, std::span<const std::size_t> region,
                           const GridSpec& grid) {
  double sum = 0.0;
  for (std::size_t i : region) {
    if (i >= grid.fine_count() || !grid.inside(i)) {
      throw DomainError("integration region leaves the study-area mask");
    }
    sum += u[i];
  }
  return sum * grid.fine_cell_area();
}

double integrate_intensity(std::span<const double> u, const GridSpec& grid) {
  double sum = 0.0;
  for (std::size_t i = 0; i < grid.fine_count(); ++i) {
    if (grid.inside(i)) sum += u[i];
  }
  return sum * grid.fine_cell_area();
}

double coarse_stable_dt(const RateFields& rates, const GridSpec& grid) {
  const double h2 = grid.coarse_size() * grid.coarse_size();
  double worst = 0.0;
  const auto& counts = grid.coarse_masked_counts();
  for (std::size_t k = 0; k < grid.coarse_count(); ++k) {
    if (counts[k] == 0) continue;
    double rate = 4.0 * rates.homogenized.mu_bar[k] / h2 +
                  std::max(0.0, -rates.homogenized.lambda_bar[k]);
    worst = std::max(worst, rate);
  }
  return worst > 0.0 ? 1.0 / worst : std::numeric_limits<double>::infinity();
}

double effective_dt(double stable_dt, int steps_per_month) {
  if (steps_per_month < 1) throw ConfigurationError("steps_per_month must be at least 1");
  double dt = 1.0 / steps_per_month;
  for (int i = 0; dt > stable_dt; ++i) {
    if (i == kMaxHalvings) throw NumericalBlowup("no stable time step for these rates", 0);
    dt *= 0.5;
  }
  return dt;
}

IntensityTrajectory solve_homogenized(std::span<const IntroductionEvent> events,
                                      const RateFields& rates, const GridSpec& grid, double t_end,
                                      const SolverSettings& settings) {
  const double t0 = snap(common_t0(events), settings.steps_per_month);
  const double dt = effective_dt(coarse_stable_dt(rates, grid), settings.steps_per_month);
  const FrameSchedule sched = schedule(t0, t_end, dt, settings.frame_stride_months);
  const CoarseOperator op = coarse_operator(rates, grid, dt);
  const int rows = grid.coarse_rows();
  const int cols = grid.coarse_cols();

  IntensityTrajectory traj{grid, t0, t0 + sched.total_steps * dt, dt, {}, {}, {}};
  FlushDenormals flush;
  std::vector<double> c = initialize_intensity(events, rates, grid);
  PaddedKernel kernel(rows, cols, op.self, op.neigh, op.active);
  kernel.load(c);
  auto save = [&](long step) {
    traj.frame_times.push_back(t0 + step * dt);
    traj.coarse_frames.push_back(c);
    traj.frames.push_back(downscale_intensity(c, rates, grid));
  };
  save(0);
  for (long step = 1; step <= sched.total_steps; ++step) {
    kernel.step();
    if (step % sched.frame_every == 0 || step == sched.total_steps) {
      kernel.store(c);
      check_finite(c, step);
      save(step);
    }
  }
  return traj;
}

IntensityTrajectory solve_fine_oracle(std::span<const IntroductionEvent> events,
                                      const RateFields& rates, const GridSpec& grid, double t_end,
                                      const SolverSettings& settings) {
  if (grid.fine_rows() > 128 || grid.fine_cols() > 128) {
    throw ConfigurationError("fine oracle is limited to 128 x 128 cells");
  }
  const double t0 = snap(common_t0(events), settings.steps_per_month);
  const double h2 = grid.fine_size() * grid.fine_size();
  double worst = 0.0;
  for (std::size_t i = 0; i < grid.fine_count(); ++i) {
    if (!grid.inside(i)) continue;
    worst = std::max(worst, 4.0 * rates.mu[i] / h2 + std::max(0.0, -rates.lambda[i]));
  }
  const double dt = effective_dt(worst > 0 ? 1.0 / worst : std::numeric_limits<double>::infinity(),
                                 settings.steps_per_month);
  const FrameSchedule sched = schedule(t0, t_end, dt, settings.frame_stride_months);

  // Lap(mu u) + lambda u  ->  out_i = (1 + dt lambda_i - 4 dt mu_i/h^2) u_i
  //                                    + dt/h^2 * sum_nb mu_nb u_nb
  const std::size_t n = grid.fine_count();
  std::vector<double> self(n, 0.0);
  std::vector<double> weight(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!grid.inside(i)) continue;
    self[i] = 1.0 + dt * rates.lambda[i] - 4.0 * dt * rates.mu[i] / h2;
    weight[i] = dt * rates.mu[i] / h2;
  }
  const int rows = grid.fine_rows();
  const int cols = grid.fine_cols();

  IntensityTrajectory traj{grid, t0, t0 + sched.total_steps * dt, dt, {}, {}, {}};
  FlushDenormals flush;
  std::vector<double> u = downscale_intensity(initialize_intensity(events, rates, grid), rates, grid);
  std::vector<double> next(n);
  auto save = [&](long step) {
    traj.frame_times.push_back(t0 + step * dt);
    traj.frames.push_back(u);
  };
  save(0);
  for (long step = 1; step <= sched.total_steps; ++step) {
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const std::size_t i = grid.fine_index(r, c);
        if (!grid.inside(i)) {
          next[i] = 0.0;
          continue;
        }
        double s = 0.0;
        if (r > 0) s += weight[i - cols] * u[i - cols];
        if (r + 1 < rows) s += weight[i + cols] * u[i + cols];
        if (c > 0) s += weight[i - 1] * u[i - 1];
        if (c + 1 < cols) s += weight[i + 1] * u[i + 1];
        next[i] = self[i] * u[i] + s;
      }
    }
    u.swap(next);
    if (step % sched.frame_every == 0 || step == sched.total_steps) {
      check_finite(u, step);
      save(step);
    }
  }
  return traj;
}

void export_trajectory(const std::filesystem::path& dir, const IntensityTrajectory& trajectory) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < trajectory.frames.size(); ++k) {
    int month = static_cast<int>(std::lround(trajectory.frame_times[k]));
    write_ascii_raster(dir / ("u_" + format_month(month) + ".asc"), trajectory.grid,
                       trajectory.frames[k]);
  }
}

UnitResponse::UnitResponse(const GridSpec& grid, const RateFields& rates, std::size_t seed_coarse,
                           int steps_per_month)
    : seed_(seed_coarse), rows_(grid.coarse_rows()), cols_(grid.coarse_cols()) {
  if (seed_coarse >= grid.coarse_count() || grid.coarse_masked_counts()[seed_coarse] == 0) {
    throw DomainError("unit source outside the study-area mask");
  }
  dt_ = effective_dt(coarse_stable_dt(rates, grid), steps_per_month);
  substeps_per_month_ = substeps(dt_);
  CoarseOperator op = coarse_operator(rates, grid, dt_);
  kernel_ = std::make_unique<PaddedKernel>(rows_, cols_, op.self, op.neigh, op.active);
  std::vector<double> c0(grid.coarse_count(), 0.0);
  double area = grid.coarse_masked_counts()[seed_coarse] * grid.fine_cell_area();
  c0[seed_coarse] = rates.homogenized.mu_bar[seed_coarse] / area;
  kernel_->load(c0);
  frames_.push_back(std::move(c0));
}

UnitResponse::~UnitResponse() = default;
UnitResponse::UnitResponse(UnitResponse&&) noexcept = default;
UnitResponse& UnitResponse::operator=(UnitResponse&&) noexcept = default;

void UnitResponse::extend_to(int lag) {
  FlushDenormals flush;
  while (max_lag() < lag) {
    for (int s = 0; s < substeps_per_month_; ++s) {
      kernel_->step();
      ++steps_taken_;
    }
    std::vector<double> c;
    kernel_->store(c);
    check_finite(c, steps_taken_);
    frames_.push_back(std::move(c));
  }
}

}  // namespace invasion
