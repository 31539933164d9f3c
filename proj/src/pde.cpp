#include "dflab/pde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace dflab {

namespace {

// Tridiagonal system (1+2r) on the diagonal, -r off it, periodic corners,
// factored once per particle. Periodic corners are folded in by a rank-one
// update of the open-boundary solve.
class CyclicSolver {
  public:
    CyclicSolver(double r, std::size_t n) : r_(r), n_(n) {
        double b = 1.0 + 2.0 * r;
        double gamma = -b;
        diag_.assign(n, b);
        diag_[0] = b - gamma;
        diag_[n - 1] = b - r * r / gamma;
        cp_.assign(n, 0.0);
        inv_.assign(n, 0.0);
        cp_[0] = -r / diag_[0];
        inv_[0] = 1.0 / diag_[0];
        for (std::size_t j = 1; j < n; ++j) {
            double denom = diag_[j] + r * cp_[j - 1];
            inv_[j] = 1.0 / denom;
            cp_[j] = -r / denom;
        }
        std::vector<double> u(n, 0.0);
        u[0] = gamma;
        u[n - 1] = -r;
        z_ = u;
        thomas(z_.data());
        fact_ = 1.0 + z_[0] + (-r / gamma) * z_[n - 1];
        vz_scale_ = -r / gamma;
    }

    void solve(double* x) const {
        thomas(x);
        double corr = (x[0] + vz_scale_ * x[n_ - 1]) / fact_;
        for (std::size_t j = 0; j < n_; ++j) x[j] -= corr * z_[j];
    }

  private:
    void thomas(double* x) const {
        x[0] *= inv_[0];
        for (std::size_t j = 1; j < n_; ++j) x[j] = (x[j] + r_ * x[j - 1]) * inv_[j];
        for (std::size_t j = n_ - 1; j-- > 0;) x[j] -= cp_[j] * x[j + 1];
    }

    double r_;
    std::size_t n_;
    std::vector<double> diag_, cp_, inv_, z_;
    double fact_ = 1.0, vz_scale_ = 0.0;
};

template <typename F>
void for_each_line(std::size_t total, std::size_t n_g, std::size_t stride, F&& fn) {
    std::size_t block = stride * n_g;
    for (std::size_t start = 0; start < total; start += block)
        for (std::size_t off = 0; off < stride; ++off) fn(start + off);
}

// walks flat node indices in order while keeping the per-axis digits current
struct Odometer {
    explicit Odometer(const TensorGrid& g) : n_g(g.n_g), idx(g.total_dim(), 0) {}

    void advance() {
        for (std::size_t a = idx.size(); a-- > 0;) {
            if (++idx[a] < n_g) return;
            idx[a] = 0;
        }
    }

    std::size_t n_g;
    std::vector<std::size_t> idx;
};

}  // namespace

std::size_t TensorGrid::n_nodes() const {
    std::size_t total = 1;
    for (std::size_t a = 0; a < total_dim(); ++a) {
        if (total > std::size_t(-1) / n_g) throw std::overflow_error("grid too large");
        total *= n_g;
    }
    return total;
}

void TensorGrid::validate(std::size_t node_budget, std::size_t max_total_dim) const {
    if (d < 1 || n_particles < 1) throw std::invalid_argument("empty grid");
    if (n_g < 8) throw std::invalid_argument("need at least 8 points per axis");
    if (total_dim() > max_total_dim)
        throw std::invalid_argument("fiber dimension exceeds the grid budget");
    if (n_nodes() > node_budget) throw std::invalid_argument("grid exceeds the node budget");
}

std::size_t TensorGrid::axis_stride(std::size_t axis) const {
    if (axis >= total_dim()) throw std::invalid_argument("axis out of range");
    std::size_t s = 1;
    for (std::size_t a = total_dim() - 1; a > axis; --a) s *= n_g;
    return s;
}

std::vector<TorusPoint> TensorGrid::node_points(std::size_t flat) const {
    std::size_t D = total_dim();
    std::vector<std::size_t> idx(D);
    for (std::size_t a = D; a-- > 0;) {
        idx[a] = flat % n_g;
        flat /= n_g;
    }
    std::vector<TorusPoint> pts;
    pts.reserve(n_particles);
    double step = h();
    for (std::size_t i = 0; i < n_particles; ++i) {
        std::vector<double> c(d);
        for (std::size_t j = 0; j < d; ++j) c[j] = double(idx[i * d + j]) * step;
        pts.emplace_back(c);
    }
    return pts;
}

void GridFunction::validate() const {
    if (values.size() != grid.n_nodes()) throw std::invalid_argument("value count mismatch");
    for (double v : values)
        if (!std::isfinite(v)) throw std::invalid_argument("non-finite grid value");
}

double multilinear(const GridFunction& f, const std::vector<double>& coords) {
    const TensorGrid& g = f.grid;
    std::size_t D = g.total_dim();
    if (coords.size() != D) throw std::invalid_argument("coordinate count mismatch");
    std::vector<std::size_t> base(D), stride(D);
    std::vector<double> frac(D);
    for (std::size_t a = 0; a < D; ++a) {
        double u = wrap1(coords[a]) * double(g.n_g);
        std::size_t i0 = std::min<std::size_t>(std::size_t(u), g.n_g - 1);
        base[a] = i0;
        frac[a] = u - double(i0);
        stride[a] = g.axis_stride(a);
    }
    double acc = 0.0;
    for (std::size_t mask = 0; mask < (std::size_t(1) << D); ++mask) {
        double w = 1.0;
        std::size_t node = 0;
        for (std::size_t a = 0; a < D; ++a) {
            bool hi = mask & (std::size_t(1) << a);
            w *= hi ? frac[a] : 1.0 - frac[a];
            std::size_t ia = base[a] + (hi ? 1 : 0);
            if (ia == g.n_g) ia = 0;
            node += ia * stride[a];
        }
        acc += w * f.values[node];
    }
    return acc;
}

void FiberProblem::validate() const {
    grid.validate(node_budget, max_total_dim);
    if (weights.w.empty()) throw std::invalid_argument("empty weight sequence");
    double sum = weights.tail;
    for (std::size_t i = 0; i < weights.w.size(); ++i) {
        if (!(weights.w[i] > 0.0)) throw std::invalid_argument("weights must be positive");
        if (i > 0 && weights.w[i] > weights.w[i - 1])
            throw std::invalid_argument("weights must be non-increasing");
        sum += weights.w[i];
    }
    if (weights.tail < 0.0 || std::fabs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("weights and tail must sum to one");
    if (grid.n_particles > weights.w.size())
        throw std::invalid_argument("more grid particles than stored weights");
    if (!terminal) throw std::invalid_argument("terminal data required");
    if (!(t0 >= 0.0) || !(horizon > t0)) throw std::invalid_argument("need 0 <= t0 < horizon");
    if (has_drift && has_hamiltonian)
        throw std::invalid_argument("drift and Hamiltonian are mutually exclusive");
    if (has_drift) {
        if (!drift.eval) throw std::invalid_argument("drift missing evaluator");
        std::size_t n = grid.n_particles;
        double off = n < weights.w.size() ? weights.w[n] : weights.tail;
        if (!(off < drift.compat_eps))
            throw std::invalid_argument("drift would read atoms off the grid");
    }
    if (has_hamiltonian && !hamiltonian.eval)
        throw std::invalid_argument("Hamiltonian missing evaluator");
}

const GridFunction& SolveResult::at_time(double t) const {
    for (std::size_t i = 0; i < times.size(); ++i)
        if (std::fabs(times[i] - t) <= 1e-9) return slices[i];
    throw std::invalid_argument("no slice stored at the requested time");
}

namespace {

SolveResult run_backward(const FiberProblem& p, double dt, std::size_t stride, bool hjb_mode) {
    p.validate();
    if (stride < 1) throw std::invalid_argument("stride must be positive");
    if (hjb_mode && !p.has_hamiltonian) throw std::invalid_argument("HJB mode needs a Hamiltonian");
    if (!hjb_mode && p.has_hamiltonian)
        throw std::invalid_argument("linear solver cannot take a Hamiltonian");

    const TensorGrid& g = p.grid;
    std::size_t D = g.total_dim(), total = g.n_nodes(), n = g.n_g, N = g.n_particles;
    double h = g.h(), inv_h = double(n), inv_2h = 0.5 * inv_h;
    std::size_t steps = time_step_count(p.t0, p.horizon, dt);

    // explicit-part CFL: transport speed M for the drift, p-Lipschitz bound
    // for the Hamiltonian
    double speed = 0.0;
    if (!hjb_mode && p.has_drift) speed = p.drift.bound;
    if (hjb_mode) speed = p.hamiltonian.lipschitz_p;
    if (speed > 0.0 && dt > h / (std::sqrt(double(g.d)) * speed) * (1.0 + 1e-12))
        throw std::invalid_argument("dt violates the explicit-part CFL bound");

    std::vector<std::size_t> stride_of(D);
    for (std::size_t a = 0; a < D; ++a) stride_of[a] = g.axis_stride(a);

    std::vector<double> v(total);
    {
        Odometer od(g);
        std::vector<TorusPoint> xs(N, TorusPoint(std::vector<double>(g.d, 0.0)));
        for (std::size_t node = 0; node < total; ++node, od.advance()) {
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < g.d; ++j) xs[i][j] = double(od.idx[i * g.d + j]) * h;
            v[node] = p.terminal(xs);
            if (!std::isfinite(v[node])) throw std::invalid_argument("non-finite terminal data");
        }
    }

    std::vector<double> src;
    if (p.source) {
        src.resize(total);
        Odometer od(g);
        std::vector<TorusPoint> xs(N, TorusPoint(std::vector<double>(g.d, 0.0)));
        for (std::size_t node = 0; node < total; ++node, od.advance()) {
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < g.d; ++j) xs[i][j] = double(od.idx[i * g.d + j]) * h;
            src[node] = p.source(xs);
        }
    }

    std::vector<std::vector<double>> vel;
    auto fill_velocities = [&](double t) {
        Odometer od(g);
        std::vector<TorusPoint> xs(N, TorusPoint(std::vector<double>(g.d, 0.0)));
        for (std::size_t node = 0; node < total; ++node, od.advance()) {
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t j = 0; j < g.d; ++j) xs[i][j] = double(od.idx[i * g.d + j]) * h;
            AtomicMeasure nu = em_N(p.weights, xs);
            for (std::size_t i = 0; i < N; ++i) {
                auto b = p.drift.eval(t, nu, xs[i]);
                for (std::size_t j = 0; j < g.d; ++j) vel[i * g.d + j][node] = b[j];
            }
        }
    };
    if (!hjb_mode && p.has_drift) {
        vel.assign(D, std::vector<double>(total));
        if (!p.drift.time_dependent) fill_velocities(p.t0);
    }

    std::vector<CyclicSolver> axis_solver;
    axis_solver.reserve(N);
    for (std::size_t i = 0; i < N; ++i)
        axis_solver.emplace_back(dt / (p.weights.w[i] * h * h), n);

    SolveResult out;
    out.grid = g;
    out.dt = dt;
    out.stride = stride;
    std::vector<double> times;
    std::vector<GridFunction> slices;
    times.push_back(p.horizon);
    slices.push_back(GridFunction{g, v});

    std::vector<double> rhs(total), line(n);
    for (std::size_t k = steps; k-- > 0;) {
        double t = p.t0 + double(k) * dt;
        rhs = v;
        if (!src.empty())
            for (std::size_t node = 0; node < total; ++node) rhs[node] += dt * src[node];
        if (!hjb_mode && p.has_drift) {
            if (p.drift.time_dependent) fill_velocities(t);
            for (std::size_t a = 0; a < D; ++a) {
                std::size_t sa = stride_of[a];
                const std::vector<double>& va = vel[a];
                for_each_line(total, n, sa, [&](std::size_t base) {
                    for (std::size_t j = 0; j < n; ++j) {
                        std::size_t node = base + j * sa;
                        std::size_t up = base + (j + 1 == n ? 0 : j + 1) * sa;
                        std::size_t down = base + (j == 0 ? n - 1 : j - 1) * sa;
                        double c = va[node], deriv;
                        if (p.central_drift)
                            deriv = (v[up] - v[down]) * inv_2h;
                        else
                            deriv = c > 0.0 ? (v[up] - v[node]) * inv_h
                                            : (v[node] - v[down]) * inv_h;
                        rhs[node] += dt * c * deriv;
                    }
                });
            }
        }
        if (hjb_mode) {
            Odometer od(g);
            std::vector<TorusPoint> xs(N, TorusPoint(std::vector<double>(g.d, 0.0)));
            std::vector<double> grad(g.d);
            double sigma = p.hamiltonian.lipschitz_p;
            for (std::size_t node = 0; node < total; ++node, od.advance()) {
                double term = 0.0;
                for (std::size_t i = 0; i < N; ++i) {
                    double s = p.weights.w[i];
                    for (std::size_t j = 0; j < g.d; ++j) {
                        std::size_t a = i * g.d + j, sa = stride_of[a];
                        xs[i][j] = double(od.idx[a]) * h;
                        std::size_t up =
                            od.idx[a] + 1 == n ? node - (n - 1) * sa : node + sa;
                        std::size_t down =
                            od.idx[a] == 0 ? node + (n - 1) * sa : node - sa;
                        grad[j] = (v[up] - v[down]) * inv_2h / s;
                        if (p.lax_friedrichs)
                            term -= sigma * (v[up] - 2.0 * v[node] + v[down]) * inv_2h;
                    }
                    term += s * p.hamiltonian.eval(xs[i], grad);
                }
                if (!std::isfinite(term))
                    throw std::runtime_error("Hamiltonian evaluation failed");
                rhs[node] -= dt * term;
            }
        }
        for (std::size_t a = 0; a < D; ++a) {
            std::size_t sa = stride_of[a];
            const CyclicSolver& solver = axis_solver[a / g.d];
            for_each_line(total, n, sa, [&](std::size_t base) {
                for (std::size_t j = 0; j < n; ++j) line[j] = rhs[base + j * sa];
                solver.solve(line.data());
                for (std::size_t j = 0; j < n; ++j) rhs[base + j * sa] = line[j];
            });
        }
        v.swap(rhs);
        if (k % stride == 0) {
            times.push_back(t);
            slices.push_back(GridFunction{g, v});
        }
    }

    std::reverse(times.begin(), times.end());
    std::reverse(slices.begin(), slices.end());
    out.times = std::move(times);
    out.slices = std::move(slices);
    return out;
}

}  // namespace

SolveResult solve_linear_backward(const FiberProblem& p, double dt, std::size_t stride) {
    return run_backward(p, dt, stride, false);
}

SolveResult solve_hjb(const FiberProblem& p, double dt, std::size_t stride) {
    return run_backward(p, dt, stride, true);
}

std::vector<GridFunction> extract_gradient(const GridFunction& hfun, std::size_t particle) {
    hfun.validate();
    const TensorGrid& g = hfun.grid;
    if (particle >= g.n_particles) throw std::invalid_argument("particle block out of range");
    double inv_2h = 0.5 * double(g.n_g);
    std::size_t total = g.n_nodes(), n = g.n_g;
    std::vector<GridFunction> out;
    out.reserve(g.d);
    for (std::size_t j = 0; j < g.d; ++j) {
        std::size_t sa = g.axis_stride(particle * g.d + j);
        GridFunction der{g, std::vector<double>(total)};
        for_each_line(total, n, sa, [&](std::size_t base) {
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t node = base + i * sa;
                std::size_t up = base + (i + 1 == n ? 0 : i + 1) * sa;
                std::size_t down = base + (i == 0 ? n - 1 : i - 1) * sa;
                der.values[node] = (hfun.values[up] - hfun.values[down]) * inv_2h;
            }
        });
        out.push_back(std::move(der));
    }
    return out;
}

double fourier_heat_oracle(const std::vector<FourierMode>& modes, const std::vector<double>& s,
                           double dt) {
    if (modes.size() != s.size() || modes.empty())
        throw std::invalid_argument("one mode per particle required");
    if (!(dt >= 0.0)) throw std::invalid_argument("negative time span");
    double rate = 0.0;
    for (std::size_t i = 0; i < modes.size(); ++i) {
        if (!(s[i] > 0.0)) throw std::invalid_argument("weights must be positive");
        rate += modes[i].eigenvalue_factor() / s[i];
    }
    return std::exp(-rate * dt);
}

HNormResult h_norm_aggregate(const std::function<FiberEvaluation(const AtomicMeasure&)>& evaluate,
                             std::size_t n_fibers, std::size_t d, RNGStream master,
                             double mass_tol) {
    if (n_fibers < 2) throw std::invalid_argument("need at least two fibers");
    std::vector<double> sq;
    sq.reserve(n_fibers);
    HNormResult res;
    for (std::size_t f = 0; f < n_fibers; ++f) {
        RNGStream rng = master.substream(f);
        AtomicMeasure mu = sample_dirichlet_ferguson(rng, d, mass_tol);
        FiberEvaluation ev = evaluate(mu);
        if (ev.skipped) {
            ++res.skipped;
            continue;
        }
        sq.push_back(ev.value * ev.value);
    }
    res.solved = sq.size();
    if (res.solved == 0) throw std::runtime_error("every fiber exceeded the grid budget");
    MonteCarloStat stat = mc_stat(sq);
    res.estimate = stat.mean;
    res.se = stat.se;
    return res;
}

FiberEvaluation evaluate_fiber_value(const std::function<double(const AtomicMeasure&)>& g,
                                     const FiberValueConfig& cfg, const AtomicMeasure& mu) {
    std::size_t n_active = truncation_index(cfg.eps, mu.weights);
    if (n_active == 0) {
        // nothing above the truncation level: the fiber value is the
        // constant g sees through its compatibility class
        return {g(mu), false};
    }
    TensorGrid grid{mu.dim(), n_active, cfg.n_g};
    if (grid.total_dim() > cfg.max_total_dim || grid.n_nodes() > cfg.node_budget)
        return {0.0, true};

    FiberProblem p;
    p.weights = mu.weights;
    p.grid = grid;
    p.t0 = cfg.t0;
    p.horizon = cfg.horizon;
    const WeightSequence& w = mu.weights;
    p.terminal = [&g, &w](const std::vector<TorusPoint>& xs) { return g(em_N(w, xs)); };
    if (cfg.has_drift) {
        p.drift = cfg.drift;
        p.has_drift = true;
    }
    p.node_budget = cfg.node_budget;
    p.max_total_dim = cfg.max_total_dim;
    std::size_t full_steps = time_step_count(cfg.t0, cfg.horizon, cfg.dt);
    SolveResult sol = solve_linear_backward(p, cfg.dt, full_steps);

    std::vector<double> coords;
    coords.reserve(grid.total_dim());
    for (std::size_t i = 0; i < n_active; ++i)
        for (std::size_t j = 0; j < mu.dim(); ++j) coords.push_back(mu.atoms[i][j]);
    return {multilinear(sol.initial(), coords), false};
}

void save_snapshot(const GridFunction& f, double time, const std::string& bin_path,
                   const std::string& json_path) {
    f.validate();
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + bin_path);
    std::uint64_t hdr[3] = {f.grid.d, f.grid.n_particles, f.grid.n_g};
    bin.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
    bin.write(reinterpret_cast<const char*>(&time), sizeof time);
    bin.write(reinterpret_cast<const char*>(f.values.data()),
              std::streamsize(f.values.size() * sizeof(double)));
    if (!bin) throw std::runtime_error("short write to " + bin_path);
    bin.close();

    nlohmann::ordered_json meta;
    meta["schema"] = "dflab.grid_snapshot.v1";
    meta["d"] = f.grid.d;
    meta["n_particles"] = f.grid.n_particles;
    meta["n_g"] = f.grid.n_g;
    meta["time"] = time;
    meta["values"] = f.values.size();
    std::ofstream js(json_path);
    if (!js) throw std::runtime_error("cannot open " + json_path);
    js << meta.dump(2) << "\n";
}

GridFunction load_snapshot(const std::string& bin_path, double* time_out) {
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + bin_path);
    std::uint64_t hdr[3];
    double time = 0.0;
    bin.read(reinterpret_cast<char*>(hdr), sizeof hdr);
    bin.read(reinterpret_cast<char*>(&time), sizeof time);
    GridFunction f;
    f.grid = TensorGrid{hdr[0], hdr[1], hdr[2]};
    f.values.resize(f.grid.n_nodes());
    bin.read(reinterpret_cast<char*>(f.values.data()),
             std::streamsize(f.values.size() * sizeof(double)));
    if (!bin) throw std::runtime_error("truncated snapshot " + bin_path);
    if (time_out) *time_out = time;
    f.validate();
    return f;
}

}  // namespace dflab
