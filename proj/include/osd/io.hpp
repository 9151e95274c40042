#pragma once

// CSV ingestion and emission. Files are UTF-8, comma separated, '.' decimal
// separator, mandatory header, no quoting. Doubles are written in shortest
// round-trip form so outputs are byte-stable.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "osd/error.hpp"
#include "osd/matrix.hpp"
#include "osd/risk.hpp"
#include "osd/sampling.hpp"

namespace osd {

inline std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Index of a header column, or npos.
    std::size_t find(std::string_view name) const {
        for (std::size_t j = 0; j < header.size(); ++j)
            if (header[j] == name) return j;
        return std::string::npos;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    for (;;) {
        const std::size_t comma = line.find(',', pos);
        std::string_view cell = line.substr(pos, comma == std::string_view::npos ? line.npos : comma - pos);
        while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
        while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r')) cell.remove_suffix(1);
        out.emplace_back(cell);
        if (comma == std::string_view::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace detail

inline CsvTable parse_csv(std::istream& in, const std::string& source) {
    CsvTable t;
    std::string line;
    bool have_header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        if (!have_header) {
            if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
            t.header = detail::split_csv_line(line);
            have_header = true;
            continue;
        }
        auto cells = detail::split_csv_line(line);
        if (cells.size() != t.header.size())
            throw Error(ErrorKind::Schema, source + ":" + std::to_string(line_no) + ": expected " +
                                               std::to_string(t.header.size()) + " fields, found " +
                                               std::to_string(cells.size()));
        t.rows.push_back(std::move(cells));
    }
    if (!have_header) throw Error(ErrorKind::Schema, source + ": missing header line");
    return t;
}

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Schema, "cannot open '" + path + "'");
    return parse_csv(in, path);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::InvalidInput, "cannot write '" + path + "'");
    out << text;
    if (!out) throw Error(ErrorKind::InvalidInput, "write failed for '" + path + "'");
}

inline double parse_double(std::string_view s, const std::string& where) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = s.data() + s.size();
    if (!s.empty() && *b == '+') ++b;
    const auto res = std::from_chars(b, e, v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != e)
        throw Error(ErrorKind::Schema, where + ": '" + std::string(s) + "' is not a number");
    return v;
}

inline long parse_long(std::string_view s, const std::string& where) {
    long v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size())
        throw Error(ErrorKind::Schema, where + ": '" + std::string(s) + "' is not an integer");
    return v;
}

/// Tabular population in one of the three model schemas.
///   finpop:    id,w,y1..ym[,g]
///   lognormal: id,w,y[,z1..zk]
///   qblogit:   id,y,x1..xp
struct Dataset {
    ModelKind kind{};
    std::vector<std::string> ids;
    Vector w;                 // empty for qblogit
    Matrix y;                 // N x m (finpop) or N x 1
    Matrix x;                 // qblogit model matrix or lognormal auxiliaries (N x k)
    std::vector<int> groups;  // finpop g column, optional

    std::size_t size() const noexcept { return ids.size(); }
};

namespace detail {

inline std::size_t require_column(const CsvTable& t, const std::string& name, const std::string& source) {
    const std::size_t j = t.find(name);
    if (j == std::string::npos) throw Error(ErrorKind::Schema, source + ": missing column '" + name + "'");
    return j;
}

/// Columns stem1, stem2, ... in order; at least `min_count`.
inline std::vector<std::size_t> numbered_columns(const CsvTable& t, const std::string& stem, std::size_t min_count,
                                                 const std::string& source) {
    std::vector<std::size_t> cols;
    for (std::size_t k = 1;; ++k) {
        const std::size_t j = t.find(stem + std::to_string(k));
        if (j == std::string::npos) break;
        cols.push_back(j);
    }
    if (cols.size() < min_count) throw Error(ErrorKind::Schema, source + ": missing column '" + stem + "1'");
    return cols;
}

inline Matrix numeric_block(const CsvTable& t, const std::vector<std::size_t>& cols, const std::string& source) {
    Matrix m(t.rows.size(), cols.size());
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        for (std::size_t k = 0; k < cols.size(); ++k)
            m(i, k) = parse_double(t.rows[i][cols[k]],
                                   source + ": row " + std::to_string(i + 1) + " column '" + t.header[cols[k]] + "'");
    return m;
}

}  // namespace detail

inline Dataset dataset_from_table(const CsvTable& t, ModelKind kind, const std::string& source) {
    Dataset d;
    d.kind = kind;
    const std::size_t id_col = detail::require_column(t, "id", source);
    if (t.rows.empty()) throw Error(ErrorKind::Schema, source + ": no data rows");
    for (const auto& r : t.rows) d.ids.push_back(r[id_col]);
    const std::size_t N = t.rows.size();
    auto column = [&](std::size_t j) {
        Vector v(N);
        for (std::size_t i = 0; i < N; ++i)
            v[i] = parse_double(t.rows[i][j], source + ": row " + std::to_string(i + 1) + " column '" + t.header[j] + "'");
        return v;
    };
    switch (kind) {
        case ModelKind::FinPop: {
            d.w = column(detail::require_column(t, "w", source));
            d.y = detail::numeric_block(t, detail::numbered_columns(t, "y", 1, source), source);
            const std::size_t g = t.find("g");
            if (g != std::string::npos) {
                d.groups.resize(N);
                for (std::size_t i = 0; i < N; ++i)
                    d.groups[i] = static_cast<int>(
                        parse_long(t.rows[i][g], source + ": row " + std::to_string(i + 1) + " column 'g'"));
            }
            break;
        }
        case ModelKind::LogNormal: {
            d.w = column(detail::require_column(t, "w", source));
            d.y = Matrix::column(column(detail::require_column(t, "y", source)));
            d.x = detail::numeric_block(t, detail::numbered_columns(t, "z", 0, source), source);
            break;
        }
        case ModelKind::QbLogit: {
            d.y = Matrix::column(column(detail::require_column(t, "y", source)));
            d.x = detail::numeric_block(t, detail::numbered_columns(t, "x", 1, source), source);
            break;
        }
    }
    return d;
}

inline Dataset read_dataset(const std::string& path, ModelKind kind) { return dataset_from_table(read_csv(path), kind, path); }

inline std::string dataset_csv(const Dataset& d) {
    std::ostringstream out;
    out << "id";
    switch (d.kind) {
        case ModelKind::FinPop:
            out << ",w";
            for (std::size_t k = 0; k < d.y.cols(); ++k) out << ",y" << k + 1;
            if (!d.groups.empty()) out << ",g";
            break;
        case ModelKind::LogNormal:
            out << ",w,y";
            for (std::size_t k = 0; k < d.x.cols(); ++k) out << ",z" << k + 1;
            break;
        case ModelKind::QbLogit:
            out << ",y";
            for (std::size_t k = 0; k < d.x.cols(); ++k) out << ",x" << k + 1;
            break;
    }
    out << '\n';
    for (std::size_t i = 0; i < d.size(); ++i) {
        out << d.ids[i];
        if (d.kind != ModelKind::QbLogit) out << ',' << format_double(d.w[i]);
        for (std::size_t k = 0; k < d.y.cols(); ++k) out << ',' << format_double(d.y(i, k));
        if (d.kind == ModelKind::FinPop) {
            if (!d.groups.empty()) out << ',' << d.groups[i];
        } else {
            for (std::size_t k = 0; k < d.x.cols(); ++k) out << ',' << format_double(d.x(i, k));
        }
        out << '\n';
    }
    return out.str();
}

inline void write_dataset(const std::string& path, const Dataset& d) { write_text(path, dataset_csv(d)); }

/// The risk problem for a dataset, with auxiliary columns and group labels attached.
inline RiskProblem make_problem(const Dataset& d) {
    switch (d.kind) {
        case ModelKind::FinPop: {
            RiskProblem pr = finpop_problem(d.y, d.w);
            pr.set_groups(d.groups);
            return pr;
        }
        case ModelKind::LogNormal: {
            RiskProblem pr = lognormal_problem(d.y.col(0), d.w);
            pr.set_aux(d.x);
            return pr;
        }
        case ModelKind::QbLogit: return qblogit_problem(d.x, d.y.col(0));
    }
    throw Error(ErrorKind::InvalidInput, "unknown model kind");
}

inline std::string scheme_csv(const SamplingScheme& s, const std::vector<std::string>& ids) {
    std::ostringstream out;
    out << "id,mu\n";
    for (std::size_t i = 0; i < s.size(); ++i) out << (i < ids.size() ? ids[i] : std::to_string(i)) << ',' << format_double(s.mu(i)) << '\n';
    return out.str();
}

inline SamplingScheme read_scheme(const std::string& path, DesignFamily family, double n) {
    const CsvTable t = read_csv(path);
    detail::require_column(t, "id", path);
    const std::size_t mu_col = detail::require_column(t, "mu", path);
    Vector mu(t.rows.size());
    for (std::size_t i = 0; i < mu.size(); ++i)
        mu[i] = parse_double(t.rows[i][mu_col], path + ": row " + std::to_string(i + 1) + " column 'mu'");
    return validate_scheme(std::move(mu), family, n);
}

/// Numeric matrix file; a first line that does not parse as numbers is
/// treated as a header.
inline Matrix read_matrix_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Schema, "cannot open '" + path + "'");
    std::vector<Vector> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = detail::split_csv_line(line);
        Vector r;
        try {
            for (const auto& c : cells) r.push_back(parse_double(c, path + ":" + std::to_string(line_no)));
        } catch (const Error&) {
            if (rows.empty() && line_no == 1) continue;
            throw;
        }
        if (!rows.empty() && r.size() != rows.front().size())
            throw Error(ErrorKind::Schema, path + ":" + std::to_string(line_no) + ": ragged matrix row");
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw Error(ErrorKind::Schema, path + ": empty matrix file");
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

}  // namespace osd
