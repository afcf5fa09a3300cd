#include "nlpinn/dataset.hpp"

#include "nlpinn/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

namespace nlpinn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr const char* kFieldsVersion = "nlpinn-fields v1";
constexpr std::array<const char*, channel_count> kChannelNames{"ux",  "uy",  "exx", "eyy", "ezz",
                                                               "exy", "sxx", "syy", "szz", "sxy"};

void fill_point(FieldDataset& ds, std::size_t p, double ux, double uy, const MaterialPointState& st) {
    auto set = [&](Channel c, double v) { ds.channel(c)[p] = v; };
    set(Channel::ux, ux);
    set(Channel::uy, uy);
    set(Channel::exx, st.strain.xx);
    set(Channel::eyy, st.strain.yy);
    set(Channel::ezz, st.strain.zz);
    set(Channel::exy, st.strain.xy);
    set(Channel::sxx, st.stress.sigma.xx);
    set(Channel::syy, st.stress.sigma.yy);
    set(Channel::szz, st.stress.sigma.zz);
    set(Channel::sxy, st.stress.sigma.xy);
}

FieldDataset empty_like(const PointCloud& cloud) {
    FieldDataset ds;
    ds.points = cloud.points;
    for (auto& v : ds.values) v.assign(cloud.size(), kNaN);
    return ds;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

std::string to_string(Channel c) { return kChannelNames[index_of(c)]; }

Channel channel_from_string(const std::string& s) {
    for (Channel c : all_channels)
        if (s == kChannelNames[index_of(c)]) return c;
    throw InvalidArgument("unknown field channel '" + s + "'");
}

bool FieldDataset::has_value(Channel c, std::size_t p) const { return !std::isnan(values[index_of(c)][p]); }

void observe_all(FieldDataset& ds) {
    for (Channel c : all_channels) {
        auto& obs = ds.observed[index_of(c)];
        obs.clear();
        for (std::size_t p = 0; p < ds.size(); ++p)
            if (ds.has_value(c, p)) obs.push_back(p);
    }
}

ElasticKind elastic_kind_from_string(const std::string& s) {
    if (s == "constant_strain") return ElasticKind::constant_strain;
    if (s == "harmonic_quadratic") return ElasticKind::harmonic_quadratic;
    throw InvalidArgument("unknown elastic generator '" + s + "'");
}

std::string to_string(ElasticKind k) {
    return k == ElasticKind::constant_strain ? "constant_strain" : "harmonic_quadratic";
}

FieldDataset generate_elastic_manufactured(const ElasticProfile& profile, const MaterialParams& m,
                                           const PointCloud& cloud) {
    FieldDataset ds = empty_like(cloud);
    const double k = profile.amplitude;
    const auto& g = profile.gradient;
    for (std::size_t p = 0; p < cloud.size(); ++p) {
        const double x = cloud.points[p][0], y = cloud.points[p][1];
        double ux, uy, ux_x, ux_y, uy_x, uy_y;
        if (profile.kind == ElasticKind::constant_strain) {
            ux = k * (g[0] * x + g[1] * y);
            uy = k * (g[2] * x + g[3] * y);
            ux_x = k * g[0];
            ux_y = k * g[1];
            uy_x = k * g[2];
            uy_y = k * g[3];
        } else {
            ux = k * (x * x - y * y);
            uy = -2.0 * k * x * y;
            ux_x = 2.0 * k * x;
            ux_y = -2.0 * k * y;
            uy_x = -2.0 * k * y;
            uy_y = -2.0 * k * x;
        }
        const auto st = evaluate_material_point(strain_from_gradients(ux_x, ux_y, uy_x, uy_y), m, false);
        fill_point(ds, p, ux, uy, st);
    }
    ds.equilibrium_terms = true;
    ds.plastic_mode = false;
    char buf[160];
    std::snprintf(buf, sizeof buf, "elastic %s amplitude=%.17g grid=%zux%zu", to_string(profile.kind).c_str(),
                  profile.amplitude, cloud.nx, cloud.ny);
    ds.provenance = buf;
    observe_all(ds);
    return ds;
}

FieldDataset generate_plastic_manufactured(const PlasticProfile& pr, const MaterialParams& m,
                                           const PointCloud& cloud) {
    if (!(pr.width > 0.0)) throw InvalidArgument("plastic profile width must be positive");
    FieldDataset ds = empty_like(cloud);
    std::size_t plastic = 0;
    for (std::size_t p = 0; p < cloud.size(); ++p) {
        const double x = cloud.points[p][0], y = cloud.points[p][1];
        const double s = (y - pr.y0 - pr.slope * (x - pr.x0)) / pr.width;
        const double th = std::tanh(s);
        const double sech2 = 1.0 - th * th;
        const double ux = pr.amplitude * pr.width * th + pr.background_x * x;
        const double uy = pr.background_y * y;
        const double ux_x = -pr.amplitude * pr.slope * sech2 + pr.background_x;
        const double ux_y = pr.amplitude * sech2;
        const auto st = evaluate_material_point(strain_from_gradients(ux_x, ux_y, 0.0, pr.background_y), m, true);
        if (st.plastic.ebar_p > 0.0) ++plastic;
        fill_point(ds, p, ux, uy, st);
    }
    ds.equilibrium_terms = false;
    ds.plastic_mode = true;
    ds.plastic_fraction = cloud.size() ? static_cast<double>(plastic) / static_cast<double>(cloud.size()) : 0.0;
    if (plastic == 0) ds.notices.push_back("degenerate dataset: no point exceeds the yield strain");
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "plastic front amplitude=%.17g width=%.17g y0=%.17g slope=%.17g grid=%zux%zu", pr.amplitude,
                  pr.width, pr.y0, pr.slope, cloud.nx, cloud.ny);
    ds.provenance = buf;
    observe_all(ds);
    return ds;
}

void save_fields(const FieldDataset& ds, std::ostream& out) {
    out << "# " << kFieldsVersion << '\n';
    out << "# equilibrium_terms=" << (ds.equilibrium_terms ? "on" : "off") << '\n';
    out << "# plastic_mode=" << (ds.plastic_mode ? "on" : "off") << '\n';
    out << "# provenance=" << ds.provenance << '\n';
    for (Channel c : all_channels) {
        std::vector<std::size_t> avail;
        for (std::size_t p = 0; p < ds.size(); ++p)
            if (ds.has_value(c, p)) avail.push_back(p);
        const auto& obs = ds.observed[index_of(c)];
        if (obs == avail) continue;
        out << "# observed." << to_string(c) << '=';
        for (std::size_t i = 0; i < obs.size(); ++i) out << (i ? " " : "") << obs[i];
        out << '\n';
    }
    out << "x,y";
    for (Channel c : all_channels) out << ',' << to_string(c);
    out << '\n';
    for (std::size_t p = 0; p < ds.size(); ++p) {
        out << fmt17(ds.points[p][0]) << ',' << fmt17(ds.points[p][1]);
        for (Channel c : all_channels) {
            out << ',';
            if (ds.has_value(c, p)) out << fmt17(ds.channel(c)[p]);
        }
        out << '\n';
    }
}

void save_fields(const FieldDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    save_fields(ds, out);
}

FieldDataset load_fields(std::istream& in, const std::string& name) {
    FieldDataset ds;
    std::map<Channel, std::vector<std::size_t>> explicit_obs;
    std::string line;
    std::size_t lineno = 0;
    bool header = false;

    auto parse_number = [&](const std::string& cell) {
        char* end = nullptr;
        const double v = std::strtod(cell.c_str(), &end);
        if (end == cell.c_str() || *end != '\0') throw ParseError(name, lineno, "malformed number '" + cell + "'");
        if (!std::isfinite(v)) throw ParseError(name, lineno, "non-finite entry '" + cell + "'");
        return v;
    };

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::string meta = line.substr(1);
            meta.erase(0, meta.find_first_not_of(' '));
            if (meta.rfind("nlpinn-fields", 0) == 0) {
                if (meta != kFieldsVersion) throw ParseError(name, lineno, "unsupported field file version '" + meta + "'");
            } else if (meta.rfind("equilibrium_terms=", 0) == 0) {
                ds.equilibrium_terms = meta.substr(18) == "on";
            } else if (meta.rfind("plastic_mode=", 0) == 0) {
                ds.plastic_mode = meta.substr(13) == "on";
            } else if (meta.rfind("provenance=", 0) == 0) {
                ds.provenance = meta.substr(11);
            } else if (meta.rfind("observed.", 0) == 0) {
                const auto eq = meta.find('=');
                if (eq == std::string::npos) throw ParseError(name, lineno, "malformed observed record");
                const Channel c = channel_from_string(meta.substr(9, eq - 9));
                std::istringstream ss(meta.substr(eq + 1));
                std::vector<std::size_t> idx;
                std::size_t v;
                while (ss >> v) idx.push_back(v);
                explicit_obs[c] = std::move(idx);
            }
            continue;
        }
        std::vector<std::string> cells;
        {
            std::string cell;
            std::istringstream ss(line);
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (!line.empty() && line.back() == ',') cells.emplace_back();
        }
        if (!header) {
            std::vector<std::string> expected{"x", "y"};
            for (Channel c : all_channels) expected.push_back(to_string(c));
            if (cells != expected)
                throw ParseError(name, lineno, "missing or malformed header (expected x,y,ux,uy,exx,eyy,ezz,exy,sxx,syy,szz,sxy)");
            header = true;
            continue;
        }
        if (cells.size() != 2 + channel_count)
            throw ParseError(name, lineno, "expected " + std::to_string(2 + channel_count) + " columns, found " +
                                               std::to_string(cells.size()));
        if (cells[0].empty() || cells[1].empty()) throw ParseError(name, lineno, "missing coordinate");
        ds.points.push_back({parse_number(cells[0]), parse_number(cells[1])});
        for (std::size_t c = 0; c < channel_count; ++c)
            ds.values[c].push_back(cells[2 + c].empty() ? kNaN : parse_number(cells[2 + c]));
    }
    if (!header) throw ParseError(name, lineno + 1, "missing header row");

    observe_all(ds);
    for (auto& [c, idx] : explicit_obs) {
        for (std::size_t p : idx)
            if (p >= ds.size() || !ds.has_value(c, p))
                throw ParseError(name, 0, "observed index " + std::to_string(p) + " has no " + to_string(c) + " value");
        ds.observed[index_of(c)] = idx;
    }
    for (std::size_t p = 0; p < ds.size(); ++p)
        if (ds.has_value(Channel::ezz, p) && ds.channel(Channel::ezz)[p] != 0.0)
            throw ParseError(name, 0, "ezz must be identically zero (plane strain); row " + std::to_string(p) +
                                          " has " + fmt17(ds.channel(Channel::ezz)[p]));
    return ds;
}

FieldDataset load_fields(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open field file: " + path.string());
    return load_fields(in, path.string());
}

void sample_index_sets(FieldDataset& ds, const std::array<std::optional<std::size_t>, channel_count>& counts,
                       std::uint64_t seed) {
    for (Channel c : all_channels) {
        const auto& want = counts[index_of(c)];
        if (!want) continue;
        std::vector<std::size_t> pool;
        for (std::size_t p = 0; p < ds.size(); ++p)
            if (ds.has_value(c, p)) pool.push_back(p);
        if (*want > pool.size())
            throw InvalidArgument("sample_index_sets: " + std::to_string(*want) + " samples requested for " +
                                  to_string(c) + " but only " + std::to_string(pool.size()) + " points carry values");
        std::mt19937_64 rng(seed + 0x9E3779B97F4A7C15ULL * (index_of(c) + 1));
        for (std::size_t i = 0; i < *want; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
            std::swap(pool[i], pool[pick(rng)]);
        }
        pool.resize(*want);
        std::sort(pool.begin(), pool.end());
        ds.observed[index_of(c)] = std::move(pool);
    }
}

PointCloud align_to_grid(FieldDataset& ds) {
    if (ds.size() < 4) throw InvalidArgument("align_to_grid: dataset has fewer than 4 points");
    auto uniq = [&](int axis) {
        std::vector<double> v;
        for (const auto& p : ds.points) v.push_back(p[axis]);
        std::sort(v.begin(), v.end());
        const double tol = 1e-9 * std::max(1.0, std::abs(v.back() - v.front()));
        std::vector<double> out;
        for (double x : v)
            if (out.empty() || x - out.back() > tol) out.push_back(x);
        return out;
    };
    const auto xs = uniq(0), ys = uniq(1);
    const std::size_t nx = xs.size(), ny = ys.size();
    if (nx < 2 || ny < 2 || nx * ny != ds.size())
        throw InvalidArgument("align_to_grid: points do not form a complete tensor-product grid");
    const double dx = (xs.back() - xs.front()) / static_cast<double>(nx - 1);
    const double dy = (ys.back() - ys.front()) / static_cast<double>(ny - 1);
    auto locate = [](const std::vector<double>& axis, double v, double step) {
        const auto it = std::lower_bound(axis.begin(), axis.end(), v - 1e-6 * step);
        return static_cast<std::size_t>(it - axis.begin());
    };
    for (std::size_t i = 1; i < nx; ++i)
        if (std::abs(xs[i] - xs[i - 1] - dx) > 1e-6 * dx) throw InvalidArgument("align_to_grid: non-uniform x spacing");
    for (std::size_t j = 1; j < ny; ++j)
        if (std::abs(ys[j] - ys[j - 1] - dy) > 1e-6 * dy) throw InvalidArgument("align_to_grid: non-uniform y spacing");

    std::vector<std::size_t> old_of_new(ds.size(), ds.size());
    std::vector<std::size_t> new_of_old(ds.size());
    for (std::size_t p = 0; p < ds.size(); ++p) {
        const std::size_t i = locate(xs, ds.points[p][0], dx), j = locate(ys, ds.points[p][1], dy);
        const std::size_t q = j * nx + i;
        if (old_of_new[q] != ds.size()) throw InvalidArgument("align_to_grid: duplicate grid point");
        old_of_new[q] = p;
        new_of_old[p] = q;
    }

    FieldDataset re = ds;
    for (std::size_t q = 0; q < ds.size(); ++q) {
        re.points[q] = ds.points[old_of_new[q]];
        for (std::size_t c = 0; c < channel_count; ++c) re.values[c][q] = ds.values[c][old_of_new[q]];
    }
    for (std::size_t c = 0; c < channel_count; ++c) {
        auto& obs = re.observed[c];
        for (auto& p : obs) p = new_of_old[p];
        std::sort(obs.begin(), obs.end());
    }
    ds = std::move(re);

    PointCloud cloud;
    cloud.nx = nx;
    cloud.ny = ny;
    cloud.spacing = dx;
    cloud.width = xs.back() - xs.front();
    cloud.height = ys.back() - ys.front();
    cloud.points = ds.points;
    cloud.areas.assign(ds.size(), dx * dy);
    return cloud;
}

void write_heatmap(std::span<const double> values, std::size_t nx, std::size_t ny,
                   const std::filesystem::path& path) {
    if (values.size() != nx * ny)
        throw InvalidArgument("write_heatmap: " + std::to_string(values.size()) + " values for a " +
                              std::to_string(nx) + "x" + std::to_string(ny) + " grid");
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = values.empty() ? 0.0 : *lo_it;
    const double hi = values.empty() ? 0.0 : *hi_it;
    const bool constant = !(hi > lo);

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "P2\n";
    out << "# nlpinn-heatmap v1\n";
    out << "# min=" << fmt17(lo) << " max=" << fmt17(hi) << '\n';
    if (constant) out << "# constant field: all pixels 128\n";
    out << nx << ' ' << ny << "\n255\n";
    for (std::size_t r = 0; r < ny; ++r) {
        const std::size_t j = ny - 1 - r;
        for (std::size_t i = 0; i < nx; ++i) {
            int px = 128;
            if (!constant) px = static_cast<int>(std::lround((values[j * nx + i] - lo) / (hi - lo) * 255.0));
            out << (i ? " " : "") << px;
        }
        out << '\n';
    }
}

PgmImage read_heatmap(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open heatmap: " + path.string());
    PgmImage img;
    std::vector<std::string> tokens;
    std::string line;
    while (tokens.size() < 4 && std::getline(in, line)) {
        if (!line.empty() && line[0] == '#') {
            img.comments.push_back(line.substr(1));
            continue;
        }
        std::istringstream ss(line);
        std::string t;
        while (ss >> t) tokens.push_back(t);
    }
    if (tokens.size() < 4 || tokens[0] != "P2") throw ParseError(path.string(), 1, "not an ASCII PGM (P2) file");
    img.width = std::stoul(tokens[1]);
    img.height = std::stoul(tokens[2]);
    img.maxval = std::stoi(tokens[3]);
    int v;
    while (in >> v) img.pixels.push_back(v);
    if (img.pixels.size() != img.width * img.height) throw ParseError(path.string(), 0, "pixel count mismatch");
    return img;
}

} // namespace nlpinn
