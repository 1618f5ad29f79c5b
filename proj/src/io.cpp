#include "lipforge/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <system_error>

namespace lipforge {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& token) {
    double v = 0.0;
    const char* first = token.data();
    const char* last = token.data() + token.size();
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) {
        throw ParseError("bad numeric token '" + token + "'");
    }
    return v;
}

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "' for reading");
    return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot open '" + path.string() + "' for writing");
    return out;
}

}  // namespace

DenseMatrix read_matrix(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("'" + path.string() + "' is empty");

    std::istringstream header(line);
    long long rows = -1;
    long long cols = -1;
    if (!(header >> rows >> cols) || rows < 0 || cols < 0) {
        throw ParseError("'" + path.string() + "': header must be '<rows> <cols>', got '" +
                         line + "'");
    }
    std::string trailing;
    if (header >> trailing) {
        throw ParseError("'" + path.string() + "': trailing token '" + trailing +
                         "' after header");
    }

    DenseMatrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (long long i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) {
            throw ParseError("'" + path.string() + "': expected " + std::to_string(rows) +
                             " data rows, file ends after " + std::to_string(i));
        }
        std::istringstream row(line);
        std::string token;
        for (long long j = 0; j < cols; ++j) {
            if (!(row >> token)) {
                throw ParseError("'" + path.string() + "': row " + std::to_string(i + 1) +
                                 " has fewer than " + std::to_string(cols) + " entries");
            }
            m(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = parse_double(token);
        }
        if (row >> token) {
            throw ParseError("'" + path.string() + "': row " + std::to_string(i + 1) +
                             " has more than " + std::to_string(cols) + " entries");
        }
    }
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(m.data()[i])) {
            throw ParseError("'" + path.string() + "': non-finite entry");
        }
    }
    return m;
}

void write_matrix(const std::filesystem::path& path, const DenseMatrix& m) {
    std::ofstream out = open_output(path);
    out << m.rows() << ' ' << m.cols() << '\n';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out << ' ';
            out << format_double(m(i, j));
        }
        out << '\n';
    }
    if (!out) throw ParseError("write to '" + path.string() + "' failed");
}

std::vector<int> read_labels(const std::filesystem::path& path) {
    std::ifstream in = open_input(path);
    std::vector<int> labels;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        long long v = 0;
        std::string trailing;
        if (!(ls >> v) || (ls >> trailing)) {
            throw ParseError("'" + path.string() + "': bad label line '" + line + "'");
        }
        labels.push_back(static_cast<int>(v));
    }
    return labels;
}

void write_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
    std::ofstream out = open_output(path);
    for (int v : labels) out << v << '\n';
    if (!out) throw ParseError("write to '" + path.string() + "' failed");
}

}  // namespace lipforge
