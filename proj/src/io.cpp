#include "fragdiff/io.hpp"

#include <bit>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

#include "fragdiff/error.hpp"

namespace fragdiff {

namespace fs = std::filesystem;

namespace {

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace

std::uint64_t fnv1a(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw Error(ErrorKind::IoError, "read failed: " + path);
    return ss.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) ensure_directory(target.parent_path().string());
    const std::string tmp = path + ".tmp." + std::to_string(getpid());
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw Error(ErrorKind::IoError, "cannot create " + tmp);
    std::size_t done = 0;
    while (done < content.size()) {
        const ssize_t w = ::write(fd, content.data() + done, content.size() - done);
        if (w < 0) {
            ::close(fd);
            ::unlink(tmp.c_str());
            throw Error(ErrorKind::IoError, "write failed: " + tmp);
        }
        done += static_cast<std::size_t>(w);
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) {
        ::unlink(tmp.c_str());
        throw Error(ErrorKind::IoError, "flush failed: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        ::unlink(tmp.c_str());
        throw Error(ErrorKind::IoError, "rename failed: " + path);
    }
}

void append_line(const std::string& path, const std::string& line) {
    std::ofstream out(path, std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot append to " + path);
    out << line << '\n';
    out.flush();
    if (!out) throw Error(ErrorKind::IoError, "append failed: " + path);
}

void ensure_directory(const std::string& path) {
    if (path.empty()) return;
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) throw Error(ErrorKind::IoError, "cannot create directory " + path + ": " + ec.message());
}

Matrix read_embedding_file(const std::string& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 20 || bytes.compare(0, 4, "EMB1") != 0) {
        throw Error(ErrorKind::IoError, path + ": not an EMB1 embedding file");
    }
    const std::uint64_t rows = get_u64(bytes, 4);
    const std::uint64_t cols = get_u64(bytes, 12);
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 20) || bytes.size() != 20 + rows * cols * 4) {
        throw Error(ErrorKind::IoError, path + ": embedding size does not match header");
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        std::uint32_t raw = 0;
        for (int b = 0; b < 4; ++b) raw |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[20 + 4 * i + b])) << (8 * b);
        m[i] = static_cast<double>(std::bit_cast<float>(raw));
    }
    return m;
}

void write_embedding_file(const std::string& path, const Matrix& m) {
    std::string out = "EMB1";
    put_u64(out, m.rows());
    put_u64(out, m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) {
        const auto raw = std::bit_cast<std::uint32_t>(static_cast<float>(m[i]));
        for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((raw >> (8 * b)) & 0xff));
    }
    write_file_atomic(path, out);
}

std::string parse_fasta(std::string_view text) {
    std::string out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        const std::string_view line = text.substr(pos, end - pos);
        if (line.empty() || line.front() != '>') {
            for (char c : line) {
                if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
            }
        }
        pos = end + 1;
    }
    return out;
}

std::string read_fasta(const std::string& path) { return parse_fasta(read_file(path)); }

std::vector<std::string> read_lines(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        out.push_back(line);
    }
    return out;
}

}  // namespace fragdiff
