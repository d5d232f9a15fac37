// Sample CSV files and atomic file output.
//
// CSV layout: header x1,...,xd, one observation per row, comma separated,
// dot decimal, numbers written with 17 significant digits.

#pragma once

#include "smm/matkit.hpp"
#include "smm/sampler.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

namespace smm {

class InputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Shortest round-trip-safe text: 17 significant digits.
inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& field)
{
    std::size_t b = 0, e = field.size();
    while (b < e && std::isspace(static_cast<unsigned char>(field[b])))
        ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(field[e - 1])))
        --e;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data() + b, field.data() + e, v);
    if (b == e || ec != std::errc() || ptr != field.data() + e)
        throw InputError("not a number: '" + field + "'");
    return v;
}

inline void write_sample_csv(std::ostream& os, const Matrix& x)
{
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        os << (j ? "," : "") << 'x' << (j + 1);
    os << '\n';
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            os << (j ? "," : "") << format_double(x(i, j));
        os << '\n';
    }
}

inline std::string sample_csv(const Matrix& x)
{
    std::ostringstream os;
    write_sample_csv(os, x);
    return os.str();
}

inline SampleMatrix read_sample_csv(std::istream& is)
{
    std::string line;
    if (!std::getline(is, line))
        throw InputError("sample CSV is empty");
    const auto header = split_csv_line(line);
    const auto d = static_cast<Eigen::Index>(header.size());
    for (Eigen::Index j = 0; j < d; ++j)
        if (header[j] != "x" + std::to_string(j + 1))
            throw InputError("sample CSV header must be x1,...,xd");
    std::vector<double> vals;
    std::size_t row = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r")
            continue;
        const auto fields = split_csv_line(line);
        if (static_cast<Eigen::Index>(fields.size()) != d)
            throw InputError("sample CSV row " + std::to_string(row + 1) + " has " +
                             std::to_string(fields.size()) + " fields, expected " + std::to_string(d));
        for (const auto& f : fields) {
            const double v = parse_double(f);
            if (!std::isfinite(v))
                throw InputError("sample CSV row " + std::to_string(row + 1) + " has a non-finite value");
            vals.push_back(v);
        }
        ++row;
    }
    if (row == 0)
        throw InputError("sample CSV has no observations");
    SampleMatrix s;
    s.x.resize(static_cast<Eigen::Index>(row), d);
    for (std::size_t i = 0; i < row; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            s.x(static_cast<Eigen::Index>(i), j) = vals[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(j)];
    s.proposals = row;
    return s;
}

inline SampleMatrix read_sample_csv(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw InputError("cannot open " + path.string());
    return read_sample_csv(is);
}

/// Write via a temporary file in the same directory followed by rename, so
/// readers never see a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content)
{
    namespace fs = std::filesystem;
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw std::runtime_error("cannot write " + tmp.string());
        os << content;
        os.flush();
        if (!os)
            throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

} // namespace smm
