#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "benchmark.hpp"
#include "bootstrap.hpp"

namespace qdlag {

inline constexpr std::string_view kSoftwareVersion = "0.1.0";
inline constexpr std::string_view kSchemaVersion = "1.0";

// Malformed input files or documents.
class SchemaError : public Error
{
public:
    using Error::Error;
};

/// Shortest decimal string that parses back to the same double; NA for NaN.
inline std::string format_number(double v)
{
    if (std::isnan(v)) return "NA";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s)
{
    if (s.empty()) return std::nullopt;
    if (s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::optional<int> parse_index(std::string_view s)
{
    int v = 0;
    if (s.empty()) return std::nullopt;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size() || v < 1) return std::nullopt;
    return v;
}

inline int digits(Index v)
{
    int d = 1;
    while (v >= 10) {
        v /= 10;
        ++d;
    }
    return d;
}

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace detail

/// Column name of exposure k at time t (1-based), time zero-padded to the width of T.
inline std::string exposure_column(Index k, Index t, Index T)
{
    std::string ts = std::to_string(t);
    const int width = detail::digits(T);
    if (static_cast<int>(ts.size()) < width) ts.insert(0, static_cast<std::size_t>(width) - ts.size(), '0');
    return "x" + std::to_string(k) + "_" + ts;
}

/**
 * Parses a dataset with header y, z1..zp, x{k}_{t}. Column order is free;
 * K and T are inferred and must form a full grid. Rows with missing or
 * non-numeric cells are rejected with their row numbers.
 */
inline RegressionData parse_dataset(std::string_view text)
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const auto line = text.substr(start, end - start);
        if (!detail::trim(line).empty()) lines.push_back(line);
        start = end + 1;
    }
    if (lines.empty()) throw SchemaError("dataset is empty");
    const auto header = detail::split_csv(lines.front());

    std::optional<std::size_t> y_col;
    std::map<int, std::size_t> z_cols;
    std::map<std::pair<int, int>, std::size_t> x_cols;
    int K = 0, T = 0;
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string_view name = header[c];
        const std::string quoted = "'" + std::string(name) + "'";
        if (name == "y") {
            if (y_col) throw SchemaError("duplicate column 'y'");
            y_col = c;
        } else if (name.size() > 1 && name.front() == 'z' && detail::parse_index(name.substr(1))) {
            const int j = *detail::parse_index(name.substr(1));
            if (!z_cols.emplace(j, c).second) throw SchemaError("duplicate column " + quoted);
        } else if (name.size() > 1 && name.front() == 'x' && name.find('_') != std::string_view::npos) {
            const std::size_t us = name.find('_');
            const auto k = detail::parse_index(name.substr(1, us - 1));
            const auto t = detail::parse_index(name.substr(us + 1));
            if (!k || !t) throw SchemaError("unrecognized column " + quoted);
            if (!x_cols.emplace(std::make_pair(*k, *t), c).second) throw SchemaError("duplicate column " + quoted);
            K = std::max(K, *k);
            T = std::max(T, *t);
        } else {
            throw SchemaError("unrecognized column " + quoted + " (expected y, z<j> or x<k>_<t>)");
        }
    }
    if (!y_col) throw SchemaError("missing response column 'y'");
    const int p = static_cast<int>(z_cols.size());
    for (int j = 1; j <= p; ++j) {
        if (!z_cols.count(j)) throw SchemaError("covariate columns must be z1..z" + std::to_string(p) + "; 'z" +
                                                std::to_string(j) + "' is missing");
    }
    for (int k = 1; k <= K; ++k) {
        for (int t = 1; t <= T; ++t) {
            if (!x_cols.count({k, t})) {
                throw SchemaError("exposure columns do not form a full " + std::to_string(K) + "x" +
                                  std::to_string(T) + " grid; missing column '" + exposure_column(k, t, T) + "'");
            }
        }
    }

    const Index n = static_cast<Index>(lines.size()) - 1;
    if (n < 1) throw SchemaError("dataset has a header but no rows");
    Matrix X(n, static_cast<Index>(K) * T);
    Matrix Z(n, p);
    Vector y(n);
    std::vector<Index> bad;
    std::string first_problem;
    for (Index i = 0; i < n; ++i) {
        const auto cells = detail::split_csv(lines[static_cast<std::size_t>(i) + 1]);
        bool ok = cells.size() == header.size();
        if (!ok && first_problem.empty()) {
            first_problem = "row " + std::to_string(i + 1) + " has " + std::to_string(cells.size()) +
                            " cells, header has " + std::to_string(header.size());
        }
        auto cell = [&](std::size_t c) -> double {
            if (!ok) return 0.0;
            const auto v = detail::parse_double(cells[c]);
            if (!v) {
                ok = false;
                if (first_problem.empty()) {
                    first_problem = "row " + std::to_string(i + 1) + ", column '" + std::string(header[c]) +
                                    "' holds '" + std::string(cells[c]) + "'";
                }
                return 0.0;
            }
            return *v;
        };
        y(i) = cell(*y_col);
        for (const auto& [j, c] : z_cols) Z(i, j - 1) = cell(c);
        for (const auto& [kt, c] : x_cols) X(i, static_cast<Index>(kt.first - 1) * T + (kt.second - 1)) = cell(c);
        if (!ok) bad.push_back(i + 1);
    }
    if (!bad.empty()) {
        std::string list;
        for (std::size_t b = 0; b < std::min<std::size_t>(bad.size(), 20); ++b) {
            list += (b ? ", " : "") + std::to_string(bad[b]);
        }
        if (bad.size() > 20) list += ", ...";
        throw SchemaError(std::to_string(bad.size()) + " incomplete or non-numeric row(s): " + list + " (" +
                          first_problem + ")");
    }
    return RegressionData(std::move(X), K, T, std::move(Z), std::move(y));
}

inline RegressionData read_dataset(const std::string& path) { return parse_dataset(detail::read_file(path)); }

inline std::string format_dataset(const RegressionData& data)
{
    std::string out = "y";
    for (Index j = 1; j <= data.p(); ++j) out += ",z" + std::to_string(j);
    for (Index k = 1; k <= data.K(); ++k)
        for (Index t = 1; t <= data.T(); ++t) out += "," + exposure_column(k, t, data.T());
    out += '\n';
    for (Index i = 0; i < data.n(); ++i) {
        out += format_number(data.response()(i));
        for (Index j = 0; j < data.p(); ++j) out += "," + format_number(data.covariates()(i, j));
        for (Index c = 0; c < data.design().cols(); ++c) out += "," + format_number(data.design()(i, c));
        out += '\n';
    }
    return out;
}

struct SelectionSummary
{
    std::string method;  // "cv" or "holdout"
    int folds = 0;
    std::uint64_t seed = 0;
    TuningGrid grid;
    Matrix score_table;
    Eigen::MatrixXi converged_table;
};

struct BootstrapSummary
{
    int replicates = 0;
    int failed = 0;
    bool unreliable = false;
    ConfidenceBand band;
    CriticalWindowReport windows;
};

/// Everything a fit, cv or bootstrap run reports, serialized as versioned JSON.
struct ResultDocument
{
    std::string schema_version{kSchemaVersion};
    std::string software_version{kSoftwareVersion};
    Estimator estimator = Estimator::Unimodal;
    double tau = 0.5;
    Tuning tuning;
    bool intercept = true;
    Matrix beta;
    Vector gamma;
    std::optional<std::vector<int>> modes;
    bool converged = false;
    int iterations = 0;
    double objective = 0.0;
    double rho = 0.0;
    std::uint64_t seed = 0;
    std::optional<SelectionSummary> selection;
    std::optional<BootstrapSummary> bootstrap;
};

namespace detail {

using json = nlohmann::ordered_json;

inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double number_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

template <class M>
json matrix_json(const M& m)
{
    json data = json::array();
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) {
            if constexpr (std::is_same_v<typename M::Scalar, double>) data.push_back(number_or_null(m(r, c)));
            else data.push_back(m(r, c));
        }
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

inline Matrix matrix_from(const json& j)
{
    const Index rows = j.at("rows").get<Index>();
    const Index cols = j.at("cols").get<Index>();
    const json& data = j.at("data");
    if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows * cols)) {
        throw SchemaError("array size does not match its dimensions");
    }
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) m(r, c) = number_from(data[static_cast<std::size_t>(r * cols + c)]);
    return m;
}

inline json vector_json(const Vector& v)
{
    json a = json::array();
    for (Index i = 0; i < v.size(); ++i) a.push_back(number_or_null(v(i)));
    return a;
}

inline Vector vector_from(const json& j)
{
    Vector v(static_cast<Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Index>(i)) = number_from(j[i]);
    return v;
}

inline json tuning_json(Estimator est, const Tuning& t)
{
    switch (est) {
    case Estimator::Unimodal:
    case Estimator::Concave: return json{{"lambda1", t.first}, {"lambda2", t.second}};
    case Estimator::ElasticNet: return json{{"lambda", t.first}, {"alpha", t.second}};
    case Estimator::Ridge: return json{{"lambda", t.first}};
    }
    return json::object();
}

inline Tuning tuning_from(Estimator est, const json& j)
{
    switch (est) {
    case Estimator::Unimodal:
    case Estimator::Concave: return Tuning{j.at("lambda1").get<double>(), j.at("lambda2").get<double>()};
    case Estimator::ElasticNet: return Tuning{j.at("lambda").get<double>(), j.at("alpha").get<double>()};
    case Estimator::Ridge: return Tuning{j.at("lambda").get<double>(), 0.0};
    }
    return {};
}

} // namespace detail

inline std::string format_document(const ResultDocument& doc)
{
    using detail::json;
    json j;
    j["schema_version"] = doc.schema_version;
    j["software"] = json{{"name", "qdlag"}, {"version", doc.software_version}};
    j["estimator"] = to_string(doc.estimator);
    j["tau"] = doc.tau;
    j["tuning"] = detail::tuning_json(doc.estimator, doc.tuning);
    j["intercept"] = doc.intercept;
    j["beta"] = detail::matrix_json(doc.beta);
    j["gamma"] = detail::vector_json(doc.gamma);
    j["modes"] = doc.modes ? json(*doc.modes) : json(nullptr);
    j["convergence"] = json{{"converged", doc.converged},
                            {"iterations", doc.iterations},
                            {"objective", detail::number_or_null(doc.objective)},
                            {"rho", detail::number_or_null(doc.rho)}};
    j["seed"] = doc.seed;
    if (doc.selection) {
        const auto& s = *doc.selection;
        j["selection"] = json{{"method", s.method},
                              {"folds", s.folds},
                              {"seed", s.seed},
                              {"first_values", s.grid.lambda1_values},
                              {"second_values", s.grid.lambda2_values},
                              {"scores", detail::matrix_json(s.score_table)},
                              {"converged", detail::matrix_json(s.converged_table)}};
    }
    if (doc.bootstrap) {
        const auto& b = *doc.bootstrap;
        j["bootstrap"] = json{{"replicates", b.replicates},
                              {"failed", b.failed},
                              {"unreliable", b.unreliable},
                              {"level", b.band.level},
                              {"lower", detail::matrix_json(b.band.lower)},
                              {"upper", detail::matrix_json(b.band.upper)},
                              {"gamma_lower", detail::vector_json(b.band.gamma_lower)},
                              {"gamma_upper", detail::vector_json(b.band.gamma_upper)},
                              {"excludes_zero", detail::matrix_json(b.windows.excludes_zero)},
                              {"intensity", detail::matrix_json(b.windows.intensity)}};
    }
    return j.dump(2) + "\n";
}

/// Parses a document; rejects schema versions with a different major number.
inline ResultDocument parse_document(std::string_view text)
{
    using detail::json;
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("result document is not valid JSON: ") + e.what());
    }
    try {
        ResultDocument doc;
        doc.schema_version = j.at("schema_version").get<std::string>();
        const auto major = [](std::string_view v) { return v.substr(0, v.find('.')); };
        if (major(doc.schema_version) != major(kSchemaVersion)) {
            throw SchemaError("result document schema " + doc.schema_version + " is incompatible with " +
                              std::string(kSchemaVersion));
        }
        doc.software_version = j.at("software").at("version").get<std::string>();
        doc.estimator = parse_estimator(j.at("estimator").get<std::string>());
        doc.tau = j.at("tau").get<double>();
        doc.tuning = detail::tuning_from(doc.estimator, j.at("tuning"));
        doc.intercept = j.at("intercept").get<bool>();
        doc.beta = detail::matrix_from(j.at("beta"));
        doc.gamma = detail::vector_from(j.at("gamma"));
        if (!j.at("modes").is_null()) doc.modes = j.at("modes").get<std::vector<int>>();
        const json& c = j.at("convergence");
        doc.converged = c.at("converged").get<bool>();
        doc.iterations = c.at("iterations").get<int>();
        doc.objective = detail::number_from(c.at("objective"));
        doc.rho = detail::number_from(c.at("rho"));
        doc.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("selection")) {
            const json& s = j.at("selection");
            SelectionSummary sel;
            sel.method = s.at("method").get<std::string>();
            sel.folds = s.at("folds").get<int>();
            sel.seed = s.at("seed").get<std::uint64_t>();
            sel.grid.lambda1_values = s.at("first_values").get<std::vector<double>>();
            sel.grid.lambda2_values = s.at("second_values").get<std::vector<double>>();
            sel.score_table = detail::matrix_from(s.at("scores"));
            sel.converged_table = detail::matrix_from(s.at("converged")).cast<int>();
            doc.selection = std::move(sel);
        }
        if (j.contains("bootstrap")) {
            const json& b = j.at("bootstrap");
            BootstrapSummary bs;
            bs.replicates = b.at("replicates").get<int>();
            bs.failed = b.at("failed").get<int>();
            bs.unreliable = b.at("unreliable").get<bool>();
            bs.band.level = b.at("level").get<double>();
            bs.band.lower = detail::matrix_from(b.at("lower"));
            bs.band.upper = detail::matrix_from(b.at("upper"));
            bs.band.gamma_lower = detail::vector_from(b.at("gamma_lower"));
            bs.band.gamma_upper = detail::vector_from(b.at("gamma_upper"));
            bs.windows.excludes_zero = detail::matrix_from(b.at("excludes_zero")).cast<int>();
            bs.windows.intensity = detail::matrix_from(b.at("intensity"));
            doc.bootstrap = std::move(bs);
        }
        return doc;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed result document: ") + e.what());
    } catch (const ConfigError& e) {
        throw SchemaError(std::string("malformed result document: ") + e.what());
    }
}

inline ResultDocument read_document(const std::string& path) { return parse_document(detail::read_file(path)); }

/// Document for a single fit.
inline ResultDocument make_document(const FitResult& fit, Estimator est, QuantileLevel tau, const Tuning& tuning,
                                    bool intercept, std::uint64_t seed)
{
    ResultDocument doc;
    doc.estimator = est;
    doc.tau = tau.value();
    doc.tuning = tuning;
    doc.intercept = intercept;
    doc.beta = fit.beta;
    doc.gamma = fit.gamma;
    if (fit.modes) doc.modes = fit.modes->values();
    doc.converged = fit.converged;
    doc.iterations = fit.iterations;
    doc.objective = fit.objective;
    doc.rho = fit.rho;
    doc.seed = seed;
    return doc;
}

inline std::string format_trace(const FitResult& fit)
{
    std::string out = "iter,objective,primal,dual\n";
    for (const auto& e : fit.trace) {
        out += std::to_string(e.iter) + "," + format_number(e.objective) + "," + format_number(e.primal_resid) + "," +
               format_number(e.dual_resid) + "\n";
    }
    return out;
}

/// Score table with one row per first value and one column per second value.
inline std::string format_score_table(const SelectionResult& sel)
{
    const bool shape = sel.estimator == Estimator::Unimodal || sel.estimator == Estimator::Concave;
    std::string out = shape ? "lambda1\\lambda2" : (sel.estimator == Estimator::Ridge ? "lambda" : "lambda\\alpha");
    if (sel.estimator == Estimator::Ridge) {
        out += ",score";
    } else {
        for (double v : sel.grid.lambda2_values) out += "," + format_number(v);
    }
    out += '\n';
    for (Index r = 0; r < sel.score_table.rows(); ++r) {
        out += format_number(sel.grid.lambda1_values[static_cast<std::size_t>(r)]);
        for (Index c = 0; c < sel.score_table.cols(); ++c) out += "," + format_number(sel.score_table(r, c));
        out += '\n';
    }
    return out;
}

/// One row per (k, t): estimate, band and critical-window flags.
inline std::string format_band_table(const Matrix& estimate, const ConfidenceBand& band,
                                     const CriticalWindowReport& windows)
{
    std::string out = "k,t,estimate,lower,upper,excludes_zero,intensity\n";
    for (Index k = 0; k < estimate.rows(); ++k) {
        for (Index t = 0; t < estimate.cols(); ++t) {
            out += std::to_string(k + 1) + "," + std::to_string(t + 1) + "," + format_number(estimate(k, t)) + "," +
                   format_number(band.lower(k, t)) + "," + format_number(band.upper(k, t)) + "," +
                   std::to_string(windows.excludes_zero(k, t)) + "," + format_number(windows.intensity(k, t)) + "\n";
        }
    }
    return out;
}

/// Truth sidecar for a simulated dataset.
inline std::string format_truth(const SimConfig& cfg, const SimTruth& truth)
{
    using detail::json;
    json j;
    j["schema_version"] = std::string(kSchemaVersion);
    j["model"] = to_string(cfg.model);
    j["error"] = to_string(cfg.error);
    j["n"] = cfg.n;
    j["snr"] = cfg.snr;
    j["tau"] = cfg.tau;
    j["seed"] = cfg.seed;
    j["replicate"] = cfg.replicate;
    j["beta_star"] = detail::matrix_json(truth.beta_star);
    j["gamma_star"] = detail::vector_json(truth.gamma_star);
    j["sigma"] = truth.sigma;
    j["quantile_shift"] = truth.quantile_shift;
    j["modes"] = truth.modes.values();
    return j.dump(2) + "\n";
}

inline std::string format_bench_rows(const std::vector<BenchRow>& rows, bool timing)
{
    std::string out = "model,n,snr,error,estimator,rep,estimation_error,runtime_seconds,first,second,failure\n";
    for (const auto& r : rows) {
        std::string failure = r.failure;
        for (char& ch : failure) {
            if (ch == ',' || ch == '\n' || ch == '"') ch = ';';
        }
        out += to_string(r.model) + "," + std::to_string(r.n) + "," + format_number(r.snr) + "," + to_string(r.error) +
               "," + to_string(r.estimator) + "," + std::to_string(r.rep) + "," + format_number(r.estimation_error) +
               "," + (timing ? format_number(r.runtime_seconds) : "NA") + "," +
               (r.failure.empty() ? format_number(r.tuning.first) : "NA") + "," +
               (r.failure.empty() ? format_number(r.tuning.second) : "NA") + "," + failure + "\n";
    }
    return out;
}

inline std::string format_bench_summary(const std::vector<BenchSummaryRow>& rows, bool timing)
{
    std::string out = "model,n,snr,error,estimator,completed,mean_error,se_error,mean_runtime_seconds\n";
    for (const auto& s : rows) {
        out += to_string(s.model) + "," + std::to_string(s.n) + "," + format_number(s.snr) + "," + to_string(s.error) +
               "," + to_string(s.estimator) + "," + std::to_string(s.completed) + "," + format_number(s.mean_error) +
               "," + format_number(s.se_error) + "," + (timing ? format_number(s.mean_runtime) : "NA") + "\n";
    }
    return out;
}

inline void write_file(const std::string& path, std::string_view content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SchemaError("cannot write '" + path + "'");
    out << content;
    if (!out) throw SchemaError("failed writing '" + path + "'");
}

} // namespace qdlag
