#pragma once

// Line-delimited JSON adapter to an external model process:
//   request  {"id":int|null,"pixels":[f32...],"h":int,"w":int,"c":int}
//   response {"label":int,"confidence":float,"logits":[...]|null}
// One response per request, in order, over the child's stdin/stdout.

#include <csignal>
#include <mutex>
#include <optional>
#include <string>

#include <fcntl.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "advdist/classifier/classifier.hpp"
#include "advdist/common/errors.hpp"

namespace advdist {

inline nlohmann::json encode_classify_request(const ImageTensor& image, std::optional<InstanceId> id) {
  nlohmann::json j;
  j["id"] = id ? nlohmann::json(*id) : nlohmann::json(nullptr);
  j["pixels"] = std::vector<float>(image.pixels().begin(), image.pixels().end());
  j["h"] = image.height();
  j["w"] = image.width();
  j["c"] = image.channels();
  return j;
}

inline Prediction decode_classify_response(const std::string& line) {
  try {
    auto j = nlohmann::json::parse(line);
    Prediction p;
    p.label = j.at("label").get<Label>();
    p.confidence = j.at("confidence").get<double>();
    if (j.contains("logits") && !j["logits"].is_null()) p.logits = j["logits"].get<std::vector<double>>();
    if (!(p.confidence > 0.0 && p.confidence <= 1.0))
      throw AdapterError("external classifier returned confidence outside (0,1]");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw AdapterError(std::string("malformed response from external classifier: ") + e.what());
  }
}

/// Spawns `/bin/sh -c command` and exchanges one JSON line per prediction.
/// Requests are serialized; the adapter is safe to share between threads.
class ExternalClassifier final : public BlackBoxClassifier {
public:
  explicit ExternalClassifier(const std::string& command, std::size_t n_classes = 2) : n_classes_(n_classes) {
    std::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0) throw AdapterError("pipe() failed");
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw AdapterError("pipe() failed");
    }
    pid_ = fork();
    if (pid_ < 0) throw AdapterError("fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    fcntl(read_fd_, F_SETFD, FD_CLOEXEC);
  }

  ExternalClassifier(const ExternalClassifier&) = delete;
  ExternalClassifier& operator=(const ExternalClassifier&) = delete;

  ~ExternalClassifier() override {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
  }

  std::size_t n_classes() const override { return n_classes_; }

protected:
  Prediction do_predict(const ImageTensor& image, std::optional<InstanceId> id) const override {
    std::string line = encode_classify_request(image, id).dump();
    line.push_back('\n');
    std::lock_guard lock(mu_);
    write_all(line);
    return decode_classify_response(read_line());
  }

private:
  void write_all(const std::string& s) const {
    std::size_t off = 0;
    while (off < s.size()) {
      ssize_t n = ::write(write_fd_, s.data() + off, s.size() - off);
      if (n <= 0) throw AdapterError("external classifier closed its input");
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() const {
    for (;;) {
      auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n <= 0) throw AdapterError("external classifier exited without a response");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::size_t n_classes_;
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  mutable std::mutex mu_;
  mutable std::string buffer_;
};

}  // namespace advdist
