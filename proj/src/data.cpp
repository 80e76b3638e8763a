#include "contab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace contab {

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> parse_csv(const std::string& text, char delimiter) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool field_started = false;
    std::size_t line = 1;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        // A bare newline (blank line) is not a record.
        if (!(record.size() == 1 && record[0].empty())) records.push_back(std::move(record));
        record.clear();
    };

    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    in_quotes = false;
                }
            } else {
                if (c == '\n') ++line;
                field.push_back(c);
            }
            continue;
        }
        if (c == '"' && !field_started) {
            in_quotes = true;
            field_started = true;
        } else if (c == delimiter) {
            end_field();
        } else if (c == '\r') {
            if (i + 1 < text.size() && text[i + 1] == '\n') continue;
            end_record();
            ++line;
        } else if (c == '\n') {
            end_record();
            ++line;
        } else {
            field.push_back(c);
            field_started = true;
        }
    }
    if (in_quotes) throw DataError("unterminated quoted field near line " + std::to_string(line));
    if (field_started || !field.empty() || !record.empty()) end_record();
    return records;
}

std::string csv_escape(const std::string& field, char delimiter) {
    const bool needs_quotes = field.find_first_of(std::string{delimiter, '"', '\n', '\r'}) != std::string::npos;
    if (!needs_quotes) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

RawTable parse_table(const std::string& text, const std::optional<std::string>& label_column,
                     const CsvOptions& options) {
    auto records = parse_csv(text, options.delimiter);
    if (records.empty()) throw DataError("empty table: no header row");

    const auto& header = records.front();
    {
        std::set<std::string> seen;
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (!seen.insert(header[c]).second)
                throw DataError("duplicate column name '" + header[c] + "' at column " + std::to_string(c));
        }
    }

    std::optional<std::size_t> label_index;
    if (label_column) {
        auto it = std::find(header.begin(), header.end(), *label_column);
        if (it == header.end()) throw DataError("label column '" + *label_column + "' not found in header");
        label_index = static_cast<std::size_t>(it - header.begin());
    }

    const std::set<std::string> missing(options.missing_markers.begin(), options.missing_markers.end());
    auto to_cell = [&](std::string s) -> Cell {
        if (missing.count(s)) return std::nullopt;
        return s;
    };

    RawTable table;
    for (std::size_t c = 0; c < header.size(); ++c)
        if (c != label_index) table.columns.push_back(header[c]);
    if (label_index) table.labels.emplace();

    for (std::size_t r = 1; r < records.size(); ++r) {
        auto& rec = records[r];
        if (rec.size() != header.size()) {
            throw DataError("ragged row " + std::to_string(r - 1) + " (line " + std::to_string(r + 1) + "): " +
                            std::to_string(rec.size()) + " fields, expected " + std::to_string(header.size()));
        }
        std::vector<Cell> row;
        row.reserve(table.columns.size());
        for (std::size_t c = 0; c < rec.size(); ++c) {
            if (c == label_index)
                table.labels->push_back(to_cell(std::move(rec[c])));
            else
                row.push_back(to_cell(std::move(rec[c])));
        }
        table.rows.push_back(std::move(row));
    }
    return table;
}

RawTable load_csv(const std::filesystem::path& path, const std::optional<std::string>& label_column,
                  const CsvOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_table(ss.str(), label_column, options);
}

bool RawTable::all_missing(std::size_t col) const {
    return std::all_of(rows.begin(), rows.end(), [col](const auto& row) { return !row[col].has_value(); });
}

RawTable RawTable::select_rows(const std::vector<std::size_t>& indices) const {
    RawTable out;
    out.columns = columns;
    out.rows.reserve(indices.size());
    if (labels) out.labels.emplace();
    for (auto i : indices) {
        out.rows.push_back(rows.at(i));
        if (labels) out.labels->push_back((*labels)[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

std::optional<double> parse_number(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    std::size_t e = s.find_last_not_of(" \t");
    if (b == std::string::npos) return std::nullopt;
    const char* first = s.data() + b;
    const char* last = s.data() + e + 1;
    if (*first == '+') ++first;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::vector<ColumnSchema> infer_schema(const RawTable& table, std::size_t max_categorical_cardinality) {
    std::vector<ColumnSchema> schema;
    schema.reserve(table.n_cols());
    for (std::size_t c = 0; c < table.n_cols(); ++c) {
        ColumnSchema col;
        col.name = table.columns[c];
        std::vector<std::string> distinct;
        std::set<std::string> seen;
        bool all_numeric = true;
        for (const auto& row : table.rows) {
            if (!row[c]) continue;
            if (seen.insert(*row[c]).second) distinct.push_back(*row[c]);
            if (all_numeric && !parse_number(*row[c])) all_numeric = false;
        }
        if (distinct.empty()) {
            col.all_missing = true;
        } else if (!all_numeric || distinct.size() <= max_categorical_cardinality) {
            col.kind = ColumnKind::categorical;
            col.categories = std::move(distinct);
        }
        schema.push_back(std::move(col));
    }
    return schema;
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

Matrix backward_difference_contrast(std::size_t k) {
    if (k == 0) throw UsageError("contrast matrix needs at least one level");
    Matrix m(k, k - 1);
    const double kd = static_cast<double>(k);
    for (std::size_t j = 1; j < k; ++j) {
        for (std::size_t level = 1; level <= k; ++level) {
            m(level - 1, j - 1) = level <= j ? -static_cast<double>(k - j) / kd : static_cast<double>(j) / kd;
        }
    }
    return m;
}

namespace {

std::size_t column_index(const RawTable& table, const std::string& name) {
    auto it = std::find(table.columns.begin(), table.columns.end(), name);
    if (it == table.columns.end()) throw DataError("column '" + name + "' missing from table");
    return static_cast<std::size_t>(it - table.columns.begin());
}

double numeric_cell(const std::string& value, const std::string& column, std::size_t row) {
    auto v = parse_number(value);
    if (!v)
        throw DataError("non-numeric value '" + value + "' in numerical column '" + column + "' at row " +
                        std::to_string(row));
    return *v;
}

// Imputes and encodes one table into the unscaled output layout.
Matrix encode_unscaled(const RawTable& table, const PreprocessorState& state, const TransformOptions& options,
                       std::size_t* unseen_count) {
    const std::size_t n = table.n_rows();
    Matrix out(n, state.n_outputs());
    std::size_t out_col = 0;
    for (const auto& col : state.input_schema) {
        if (std::find(state.dropped_columns.begin(), state.dropped_columns.end(), col.name) !=
            state.dropped_columns.end())
            continue;
        const std::size_t src = column_index(table, col.name);
        if (col.kind == ColumnKind::numerical) {
            const double fill = state.numeric_impute.at(col.name);
            for (std::size_t r = 0; r < n; ++r) {
                const auto& cell = table.rows[r][src];
                out(r, out_col) = cell ? numeric_cell(*cell, col.name, r) : fill;
            }
            ++out_col;
        } else {
            const auto& cmap = state.contrast_maps.at(col.name);
            const std::size_t width = cmap.levels.size() - 1;
            std::unordered_map<std::string, std::size_t> level_of;
            for (std::size_t l = 0; l < cmap.levels.size(); ++l) level_of[cmap.levels[l]] = l;
            const std::size_t modal = level_of.at(state.categorical_impute.at(col.name));
            for (std::size_t r = 0; r < n; ++r) {
                const auto& cell = table.rows[r][src];
                std::size_t level = modal;
                if (cell) {
                    auto it = level_of.find(*cell);
                    if (it != level_of.end()) {
                        level = it->second;
                    } else if (options.unseen == UnseenCategoryPolicy::error) {
                        throw DataError("unseen category '" + *cell + "' in column '" + col.name + "' at row " +
                                        std::to_string(r));
                    } else if (unseen_count) {
                        ++*unseen_count;
                    }
                }
                for (std::size_t j = 0; j < width; ++j) out(r, out_col + j) = cmap.contrast(level, j);
            }
            out_col += width;
        }
    }
    return out;
}

const char* kind_name(ColumnKind k) { return k == ColumnKind::numerical ? "numerical" : "categorical"; }

ColumnKind kind_from(const std::string& s) {
    if (s == "numerical") return ColumnKind::numerical;
    if (s == "categorical") return ColumnKind::categorical;
    throw DataError("unknown column kind '" + s + "'");
}

}  // namespace

PreprocessorState fit_preprocessor(const RawTable& table, const std::vector<ColumnSchema>& schema) {
    if (schema.size() != table.n_cols()) throw DataError("schema/table column count mismatch");
    for (std::size_t c = 0; c < schema.size(); ++c) {
        if (schema[c].name != table.columns[c])
            throw DataError("schema column '" + schema[c].name + "' does not match table column '" +
                            table.columns[c] + "'");
    }
    if (table.n_rows() == 0) throw DataError("cannot fit preprocessing on an empty table");

    PreprocessorState state;
    state.input_schema = schema;

    for (std::size_t c = 0; c < schema.size(); ++c) {
        const auto& col = schema[c];
        if (col.all_missing || table.all_missing(c)) {
            state.dropped_columns.push_back(col.name);
            continue;
        }
        if (col.kind == ColumnKind::numerical) {
            double sum = 0.0;
            std::size_t count = 0;
            for (std::size_t r = 0; r < table.n_rows(); ++r) {
                if (!table.rows[r][c]) continue;
                sum += numeric_cell(*table.rows[r][c], col.name, r);
                ++count;
            }
            state.numeric_impute[col.name] = sum / static_cast<double>(count);
            state.output_layout.push_back({col.name, col.name, -1});
        } else {
            std::vector<std::string> levels = col.categories;
            std::unordered_map<std::string, std::size_t> counts;
            std::vector<std::string> order;
            for (const auto& row : table.rows) {
                if (!row[c]) continue;
                if (counts[*row[c]]++ == 0) order.push_back(*row[c]);
                if (std::find(levels.begin(), levels.end(), *row[c]) == levels.end()) levels.push_back(*row[c]);
            }
            // Mode, ties to first appearance.
            std::string mode = order.front();
            for (const auto& v : order)
                if (counts[v] > counts[mode]) mode = v;
            state.categorical_impute[col.name] = mode;
            ContrastMap cmap{levels, backward_difference_contrast(levels.size())};
            for (std::size_t j = 0; j + 1 < levels.size(); ++j)
                state.output_layout.push_back({col.name + "_bd" + std::to_string(j + 1), col.name, static_cast<int>(j)});
            state.contrast_maps.emplace(col.name, std::move(cmap));
        }
    }
    if (state.output_layout.empty()) throw DataError("no columns survive preprocessing");

    const Matrix encoded = encode_unscaled(table, state, {}, nullptr);
    state.scale_min.resize(state.n_outputs());
    state.scale_max.resize(state.n_outputs());
    for (std::size_t j = 0; j < state.n_outputs(); ++j) {
        state.scale_min[j] = encoded.col(j).minCoeff();
        state.scale_max[j] = encoded.col(j).maxCoeff();
    }
    if (table.labels) state.label_classes = label_classes(*table.labels);
    return state;
}

TransformResult transform(const RawTable& table, const PreprocessorState& state, const TransformOptions& options) {
    TransformResult result;
    Matrix X = encode_unscaled(table, state, options, &result.unseen_categories);
    for (std::size_t j = 0; j < state.n_outputs(); ++j) {
        const double lo = state.scale_min[j];
        const double range = state.scale_max[j] - lo;
        for (Eigen::Index r = 0; r < X.rows(); ++r) {
            X(r, j) = range > 0.0 ? std::clamp((X(r, j) - lo) / range, 0.0, 1.0) : 0.0;
        }
    }
    auto& ds = result.dataset;
    ds.X = std::move(X);
    for (const auto& oc : state.output_layout) ds.feature_names.push_back(oc.name);
    ds.row_ids.resize(table.n_rows());
    std::iota(ds.row_ids.begin(), ds.row_ids.end(), std::size_t{0});
    ds.n_classes = state.label_classes.size();
    if (table.labels && !state.label_classes.empty()) ds.y = encode_labels(*table.labels, state.label_classes);
    return result;
}

std::vector<std::string> label_classes(const std::vector<Cell>& raw) {
    std::vector<std::string> distinct;
    std::set<std::string> seen;
    bool numeric = true;
    for (const auto& c : raw) {
        if (!c) continue;
        if (seen.insert(*c).second) {
            distinct.push_back(*c);
            if (!parse_number(*c)) numeric = false;
        }
    }
    if (numeric) {
        std::stable_sort(distinct.begin(), distinct.end(),
                         [](const auto& a, const auto& b) { return *parse_number(a) < *parse_number(b); });
    } else {
        std::sort(distinct.begin(), distinct.end());
    }
    return distinct;
}

Labels encode_labels(const std::vector<Cell>& raw, const std::vector<std::string>& classes) {
    Labels y(raw.size(), kUnlabeled);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        if (!raw[i]) continue;
        auto it = std::find(classes.begin(), classes.end(), *raw[i]);
        if (it == classes.end()) throw DataError("unknown label '" + *raw[i] + "' at row " + std::to_string(i));
        y[i] = static_cast<int>(it - classes.begin());
    }
    return y;
}

MinMaxScaler MinMaxScaler::fit(const Matrix& X) {
    MinMaxScaler s;
    s.min = X.colwise().minCoeff();
    s.max = X.colwise().maxCoeff();
    return s;
}

Matrix MinMaxScaler::apply(const Matrix& X) const {
    Matrix out(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double range = max[j] - min[j];
        for (Eigen::Index r = 0; r < X.rows(); ++r)
            out(r, j) = range > 0.0 ? std::clamp((X(r, j) - min[j]) / range, 0.0, 1.0) : 0.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// State serialization
// ---------------------------------------------------------------------------

nlohmann::json PreprocessorState::to_json() const {
    nlohmann::json j;
    j["schema_version"] = kPreprocessorSchemaVersion;
    auto& schema = j["input_schema"] = nlohmann::json::array();
    for (const auto& c : input_schema) {
        schema.push_back({{"name", c.name},
                          {"kind", kind_name(c.kind)},
                          {"categories", c.categories},
                          {"all_missing", c.all_missing}});
    }
    j["dropped_columns"] = dropped_columns;
    j["numeric_impute"] = numeric_impute;
    j["categorical_impute"] = categorical_impute;
    auto& maps = j["contrast_maps"] = nlohmann::json::object();
    for (const auto& [name, cmap] : contrast_maps) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < cmap.contrast.rows(); ++r) {
            std::vector<double> row(cmap.contrast.row(r).begin(), cmap.contrast.row(r).end());
            rows.push_back(row);
        }
        maps[name] = {{"levels", cmap.levels}, {"contrast", rows}};
    }
    j["scale_min"] = scale_min;
    j["scale_max"] = scale_max;
    auto& layout = j["output_layout"] = nlohmann::json::array();
    for (const auto& oc : output_layout)
        layout.push_back({{"name", oc.name}, {"source", oc.source}, {"contrast_column", oc.contrast_column}});
    j["label_classes"] = label_classes;
    return j;
}

PreprocessorState PreprocessorState::from_json(const nlohmann::json& j) {
    if (!j.contains("schema_version")) throw DataError("preprocessor state lacks schema_version");
    const int version = j.at("schema_version").get<int>();
    if (version != kPreprocessorSchemaVersion)
        throw DataError("unsupported preprocessor schema_version " + std::to_string(version));
    PreprocessorState s;
    for (const auto& c : j.at("input_schema")) {
        s.input_schema.push_back({c.at("name").get<std::string>(), kind_from(c.at("kind").get<std::string>()),
                                  c.at("categories").get<std::vector<std::string>>(),
                                  c.at("all_missing").get<bool>()});
    }
    s.dropped_columns = j.at("dropped_columns").get<std::vector<std::string>>();
    s.numeric_impute = j.at("numeric_impute").get<std::map<std::string, double>>();
    s.categorical_impute = j.at("categorical_impute").get<std::map<std::string, std::string>>();
    for (const auto& [name, m] : j.at("contrast_maps").items()) {
        ContrastMap cmap;
        cmap.levels = m.at("levels").get<std::vector<std::string>>();
        const auto rows = m.at("contrast").get<std::vector<std::vector<double>>>();
        cmap.contrast.resize(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (std::size_t c = 0; c < rows[r].size(); ++c) cmap.contrast(r, c) = rows[r][c];
        s.contrast_maps.emplace(name, std::move(cmap));
    }
    s.scale_min = j.at("scale_min").get<std::vector<double>>();
    s.scale_max = j.at("scale_max").get<std::vector<double>>();
    for (const auto& oc : j.at("output_layout"))
        s.output_layout.push_back({oc.at("name").get<std::string>(), oc.at("source").get<std::string>(),
                                   oc.at("contrast_column").get<int>()});
    s.label_classes = j.at("label_classes").get<std::vector<std::string>>();
    return s;
}

std::string PreprocessorState::serialize() const { return to_json().dump(2); }

// ---------------------------------------------------------------------------
// Datasets and splitting
// ---------------------------------------------------------------------------

std::size_t TableDataset::n_labeled() const {
    if (!y) return 0;
    return static_cast<std::size_t>(std::count_if(y->begin(), y->end(), [](int v) { return v != kUnlabeled; }));
}

TableDataset TableDataset::select_rows(const std::vector<std::size_t>& indices) const {
    TableDataset out;
    out.X.resize(static_cast<Eigen::Index>(indices.size()), X.cols());
    out.feature_names = feature_names;
    out.n_classes = n_classes;
    if (y) out.y.emplace();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto i = indices[k];
        if (i >= n_samples()) throw DataError("row index out of range");
        out.X.row(k) = X.row(i);
        out.row_ids.push_back(row_ids.empty() ? i : row_ids[i]);
        if (y) out.y->push_back((*y)[i]);
    }
    return out;
}

SplitIndices split_indices(const std::optional<Labels>& labels, std::size_t n, const SplitFractions& f,
                           std::uint64_t seed) {
    if (!(f.train > 0 && f.val > 0 && f.test > 0) || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
        throw UsageError("split fractions must be positive and sum to 1");
    if (labels && labels->size() != n) throw DataError("label count does not match row count");

    std::map<int, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < n; ++i) strata[labels ? (*labels)[i] : kUnlabeled].push_back(i);

    std::mt19937_64 rng(seed);
    SplitIndices out;
    for (auto& [label, idx] : strata) {
        const std::size_t size = idx.size();
        const bool labeled = labels && label != kUnlabeled;
        if (labeled && size < 3)
            throw DataError("class " + std::to_string(label) + " has " + std::to_string(size) +
                            " samples, fewer than the 3 splits");
        std::shuffle(idx.begin(), idx.end(), rng);
        auto n_val = static_cast<std::size_t>(std::llround(f.val * static_cast<double>(size)));
        auto n_test = static_cast<std::size_t>(std::llround(f.test * static_cast<double>(size)));
        if (labeled) {
            n_val = std::max<std::size_t>(n_val, 1);
            n_test = std::max<std::size_t>(n_test, 1);
        }
        n_val = std::min(n_val, size);
        n_test = std::min(n_test, size - n_val);
        const std::size_t n_train = size - n_val - n_test;
        out.train.insert(out.train.end(), idx.begin(), idx.begin() + n_train);
        out.val.insert(out.val.end(), idx.begin() + n_train, idx.begin() + n_train + n_val);
        out.test.insert(out.test.end(), idx.begin() + n_train + n_val, idx.end());
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.val.begin(), out.val.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

DatasetSplits split(const TableDataset& dataset, const SplitFractions& fractions, std::uint64_t seed) {
    const auto idx = split_indices(dataset.y, dataset.n_samples(), fractions, seed);
    return {dataset.select_rows(idx.train), dataset.select_rows(idx.val), dataset.select_rows(idx.test)};
}

void write_dataset_csv(const std::filesystem::path& path, const TableDataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path.string());
    out << kRowIdColumn;
    for (const auto& name : ds.feature_names) out << ',' << csv_escape(name);
    if (ds.y) out << ',' << kLabelColumn;
    out << '\n';
    for (std::size_t i = 0; i < ds.n_samples(); ++i) {
        out << (ds.row_ids.empty() ? i : ds.row_ids[i]);
        for (Eigen::Index j = 0; j < ds.X.cols(); ++j) out << ',' << format_double(ds.X(i, j));
        if (ds.y) {
            out << ',';
            if ((*ds.y)[i] != kUnlabeled) out << (*ds.y)[i];
        }
        out << '\n';
    }
}

TableDataset read_dataset_csv(const std::filesystem::path& path, std::size_t n_classes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    auto records = parse_csv(ss.str());
    if (records.empty()) throw DataError("empty dataset file: " + path.string());
    const auto& header = records.front();
    const bool has_ids = !header.empty() && header.front() == kRowIdColumn;
    const bool has_labels = !header.empty() && header.back() == kLabelColumn;
    const std::size_t first = has_ids ? 1 : 0;
    const std::size_t last = header.size() - (has_labels ? 1 : 0);

    TableDataset ds;
    ds.feature_names.assign(header.begin() + static_cast<long>(first), header.begin() + static_cast<long>(last));
    const std::size_t n = records.size() - 1;
    ds.X.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(last - first));
    if (has_labels) ds.y.emplace();
    int max_label = -1;
    for (std::size_t r = 0; r < n; ++r) {
        const auto& rec = records[r + 1];
        if (rec.size() != header.size())
            throw DataError("ragged row " + std::to_string(r) + " in " + path.string());
        ds.row_ids.push_back(has_ids ? static_cast<std::size_t>(std::stoull(rec[0])) : r);
        for (std::size_t c = first; c < last; ++c) {
            auto v = parse_number(rec[c]);
            if (!v)
                throw DataError("non-numeric value at row " + std::to_string(r) + ", column " + std::to_string(c) +
                                " of " + path.string());
            ds.X(r, c - first) = *v;
        }
        if (has_labels) {
            const auto& cell = rec.back();
            int label = kUnlabeled;
            if (!cell.empty()) {
                auto v = parse_number(cell);
                if (!v || *v < 0 || *v != std::floor(*v))
                    throw DataError("bad label '" + cell + "' at row " + std::to_string(r));
                label = static_cast<int>(*v);
            }
            max_label = std::max(max_label, label);
            ds.y->push_back(label);
        }
    }
    ds.n_classes = n_classes ? n_classes : static_cast<std::size_t>(max_label + 1);
    return ds;
}

}  // namespace contab
