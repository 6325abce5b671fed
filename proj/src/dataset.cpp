#include "imc/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "imc/errors.hpp"

namespace imc {

void Dataset::validate() const {
    if (size() == 0) throw InvalidInputError("dataset: empty");
    if (actions.rows() != observations.rows())
        throw InvalidInputError("dataset: observation/action row counts differ");
    for (std::size_t i = 0; i < observations.size(); ++i)
        if (!std::isfinite(observations.data()[i]))
            throw InvalidInputError("dataset: non-finite observation");
    for (std::size_t i = 0; i < actions.size(); ++i)
        if (!std::isfinite(actions.data()[i]))
            throw InvalidInputError("dataset: non-finite action");
    if (!behavior_labels.empty()) {
        if (behavior_labels.size() != size())
            throw InvalidInputError("dataset: behavior label count mismatch");
        for (int b : behavior_labels) {
            if (b < -1) throw InvalidInputError("dataset: behavior label < -1");
            if (b >= 0 && n_behaviors > 0 && b >= n_behaviors)
                throw InvalidInputError("dataset: behavior label " + std::to_string(b) +
                                        " out of range (B=" + std::to_string(n_behaviors) + ")");
        }
    }
    if (!start_ids.empty() && start_ids.size() != size())
        throw InvalidInputError("dataset: start_id count mismatch");
}

Dataset Dataset::select(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.observations = Matrix(rows.size(), d_o());
    out.actions = Matrix(rows.size(), d_a());
    out.n_behaviors = n_behaviors;
    if (!behavior_labels.empty()) out.behavior_labels.resize(rows.size());
    if (!start_ids.empty()) out.start_ids.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        for (std::size_t c = 0; c < d_o(); ++c) out.observations(i, c) = observations(r, c);
        for (std::size_t c = 0; c < d_a(); ++c) out.actions(i, c) = actions(r, c);
        if (!behavior_labels.empty()) out.behavior_labels[i] = behavior_labels[r];
        if (!start_ids.empty()) out.start_ids[i] = start_ids[r];
    }
    return out;
}

void TrainConfig::validate() const {
    if (!(eta > 0.0)) throw InvalidInputError("config: eta must be > 0");
    if (n_components == 0) throw InvalidInputError("config: n_components must be >= 1");
    if (!(sigma_sq > 0.0)) throw InvalidInputError("config: sigma_sq must be > 0");
    if (!(expert_lr > 0.0)) throw InvalidInputError("config: expert_lr must be > 0");
    if (!(gating_lr > 0.0)) throw InvalidInputError("config: gating_lr must be > 0");
    if (epsilon < 0.0) throw InvalidInputError("config: epsilon must be >= 0");
    if (ridge_lambda < 0.0) throw InvalidInputError("config: ridge_lambda must be >= 0");
    if (max_iters == 0) throw InvalidInputError("config: max_iters must be >= 1");
}

void Responsibilities::validate() const {
    for (std::size_t n = 0; n < q.rows(); ++n) {
        double sum = 0.0;
        for (std::size_t k = 0; k < q.cols(); ++k) {
            const double v = q(n, k);
            if (!(v >= 0.0 && v <= 1.0))
                throw InvalidInputError("responsibilities: entry outside [0,1] at row " +
                                        std::to_string(n));
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw InvalidInputError("responsibilities: row " + std::to_string(n) +
                                    " sums to " + std::to_string(sum));
    }
}

void MixtureWeights::validate() const {
    double sum = 0.0;
    for (double v : p_z) {
        if (v < 0.0) throw InvalidInputError("mixture weights: negative entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw InvalidInputError("mixture weights: sum " + std::to_string(sum));
}

std::string format_double(double v) {
    char buf[32];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    for (std::size_t c = 0; c < ds.d_o(); ++c) f << "o_" << c << ',';
    for (std::size_t c = 0; c < ds.d_a(); ++c) {
        f << "a_" << c;
        if (c + 1 < ds.d_a()) f << ',';
    }
    if (!ds.behavior_labels.empty()) f << ",behavior";
    if (!ds.start_ids.empty()) f << ",start_id";
    f << '\n';
    for (std::size_t n = 0; n < ds.size(); ++n) {
        for (std::size_t c = 0; c < ds.d_o(); ++c) f << format_double(ds.observations(n, c)) << ',';
        for (std::size_t c = 0; c < ds.d_a(); ++c) {
            f << format_double(ds.actions(n, c));
            if (c + 1 < ds.d_a()) f << ',';
        }
        if (!ds.behavior_labels.empty()) f << ',' << ds.behavior_labels[n];
        if (!ds.start_ids.empty()) f << ',' << ds.start_ids[n];
        f << '\n';
    }
    if (!f) throw IoError("write failed: " + path.string());
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_cell(const std::string& cell, std::size_t row, std::size_t col) {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last)
        throw IoError("non-numeric cell at row " + std::to_string(row) + ", column " +
                      std::to_string(col) + ": '" + cell + "'");
    if (std::isnan(v) || std::isinf(v))
        throw IoError("non-finite value at row " + std::to_string(row) + ", column " +
                      std::to_string(col));
    return v;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, int expected_behaviors) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open dataset: " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw IoError("empty dataset file: " + path.string());
    const auto header = split_csv(line);

    std::size_t d_o = 0, d_a = 0;
    bool has_behavior = false, has_start = false;
    for (const auto& name : header) {
        if (name.rfind("o_", 0) == 0)
            ++d_o;
        else if (name.rfind("a_", 0) == 0)
            ++d_a;
        else if (name == "behavior")
            has_behavior = true;
        else if (name == "start_id")
            has_start = true;
        else
            throw IoError("unknown dataset column: '" + name + "'");
    }
    if (d_o == 0 || d_a == 0) throw IoError("dataset header lacks o_*/a_* columns");
    const std::size_t arity = d_o + d_a + (has_behavior ? 1 : 0) + (has_start ? 1 : 0);

    std::vector<std::vector<double>> obs, act;
    std::vector<int> labels, starts;
    std::size_t row = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        ++row;
        const auto cells = split_csv(line);
        if (cells.size() != arity)
            throw IoError("ragged row " + std::to_string(row) + ": expected " +
                          std::to_string(arity) + " cells, got " + std::to_string(cells.size()));
        std::vector<double> o(d_o), a(d_a);
        std::size_t c = 0;
        for (std::size_t i = 0; i < d_o; ++i, ++c) o[i] = parse_cell(cells[c], row, c);
        for (std::size_t i = 0; i < d_a; ++i, ++c) a[i] = parse_cell(cells[c], row, c);
        if (has_behavior) {
            const int b = static_cast<int>(parse_cell(cells[c], row, c));
            if (b < -1) throw IoError("behavior label < -1 at row " + std::to_string(row));
            if (expected_behaviors > 0 && b >= expected_behaviors)
                throw IoError("behavior label " + std::to_string(b) + " out of range at row " +
                              std::to_string(row));
            labels.push_back(b);
            ++c;
        }
        if (has_start) {
            starts.push_back(static_cast<int>(parse_cell(cells[c], row, c)));
            ++c;
        }
        obs.push_back(std::move(o));
        act.push_back(std::move(a));
    }
    if (obs.empty()) throw IoError("dataset has no data rows: " + path.string());

    Dataset ds;
    ds.observations = Matrix::from_rows(obs);
    ds.actions = Matrix::from_rows(act);
    ds.behavior_labels = std::move(labels);
    ds.start_ids = std::move(starts);
    if (expected_behaviors > 0) {
        ds.n_behaviors = expected_behaviors;
    } else if (!ds.behavior_labels.empty()) {
        int max_label = -1;
        for (int b : ds.behavior_labels) max_label = std::max(max_label, b);
        ds.n_behaviors = max_label + 1;
    }
    ds.validate();
    return ds;
}

}  // namespace imc
