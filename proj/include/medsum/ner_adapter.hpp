#pragma once

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "medsum/common.hpp"
#include "medsum/entities.hpp"

namespace medsum {

class NerToolUnavailable : public Error {
 public:
  using Error::Error;
};

// Adapter for an external biomedical NER tool speaking newline-delimited
// JSON over stdio: request {"text": ...}, response
// {"spans": [{"surface","start","end","category"}]}.
//
// The subprocess is started lazily and reused; concurrent recognize calls
// are serialized onto the single tool process.
class ExternalNerAdapter : public Recognizer {
 public:
  explicit ExternalNerAdapter(std::string command)
      : command_(std::move(command)) {}

  ~ExternalNerAdapter() override { shutdown(); }

  ExternalNerAdapter(const ExternalNerAdapter&) = delete;
  ExternalNerAdapter& operator=(const ExternalNerAdapter&) = delete;

  std::vector<EntitySpan> recognize(const std::string& text) const override {
    std::lock_guard<std::mutex> lock(mu_);
    ensure_started();
    json req{{"text", text}};
    std::string line = req.dump();
    line.push_back('\n');
    if (fputs(line.c_str(), to_child_) == EOF || fflush(to_child_) != 0) {
      shutdown_locked();
      throw NerToolUnavailable("NER tool pipe closed: " + command_);
    }
    std::string resp = read_line();
    return parse_spans(resp);
  }

  // One-shot batch mode: requests written to a temp file, the tool is run
  // once as `<command> <file>` and emits one response line per request.
  std::vector<std::vector<EntitySpan>> recognize_batch(
      const std::vector<std::string>& texts) const {
    std::string path = "/tmp/medsum_ner_batch_" +
                       std::to_string(::getpid()) + ".jsonl";
    {
      FILE* f = fopen(path.c_str(), "wb");
      if (!f) throw Error("cannot write NER batch file: " + path);
      for (const auto& t : texts) {
        std::string line = json{{"text", t}}.dump();
        line.push_back('\n');
        fputs(line.c_str(), f);
      }
      fclose(f);
    }
    std::string cmd = command_ + " " + path;
    FILE* out = popen(cmd.c_str(), "r");
    if (!out) {
      remove(path.c_str());
      throw NerToolUnavailable("cannot start NER tool: " + command_);
    }
    std::vector<std::vector<EntitySpan>> results;
    char buf[65536];
    std::string line;
    while (fgets(buf, sizeof buf, out)) {
      line += buf;
      if (!line.empty() && line.back() == '\n') {
        results.push_back(parse_spans(line));
        line.clear();
      }
    }
    int rc = pclose(out);
    remove(path.c_str());
    if (rc != 0 || results.size() != texts.size())
      throw NerToolUnavailable("NER tool batch run failed: " + command_);
    return results;
  }

 private:
  static std::vector<EntitySpan> parse_spans(const std::string& line) {
    json resp;
    try {
      resp = json::parse(line);
    } catch (const json::parse_error&) {
      throw Error("bad NER tool response: " + line);
    }
    std::vector<EntitySpan> spans;
    for (const auto& s : resp.value("spans", json::array())) {
      EntitySpan span;
      span.surface = s.value("surface", "");
      span.start = s.value("start", std::size_t{0});
      span.end = s.value("end", std::size_t{0});
      span.category = s.value("category", "");
      spans.push_back(std::move(span));
    }
    return spans;
  }

  void ensure_started() const {
    if (pid_ > 0) return;
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      throw NerToolUnavailable("cannot create pipes for NER tool");
    pid_t pid = fork();
    if (pid < 0) throw NerToolUnavailable("cannot fork NER tool");
    if (pid == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command_.c_str(), (char*)nullptr);
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    to_child_ = fdopen(to_child[1], "w");
    from_child_ = fdopen(from_child[0], "r");
    pid_ = pid;
    if (!to_child_ || !from_child_) {
      shutdown_locked();
      throw NerToolUnavailable("cannot attach to NER tool: " + command_);
    }
  }

  std::string read_line() const {
    std::string line;
    char buf[65536];
    while (fgets(buf, sizeof buf, from_child_)) {
      line += buf;
      if (!line.empty() && line.back() == '\n') return line;
    }
    shutdown_locked();
    throw NerToolUnavailable("NER tool exited: " + command_);
  }

  void shutdown() const {
    std::lock_guard<std::mutex> lock(mu_);
    shutdown_locked();
  }

  void shutdown_locked() const {
    if (to_child_) fclose(to_child_);
    if (from_child_) fclose(from_child_);
    to_child_ = nullptr;
    from_child_ = nullptr;
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  std::string command_;
  mutable std::mutex mu_;
  mutable pid_t pid_ = -1;
  mutable FILE* to_child_ = nullptr;
  mutable FILE* from_child_ = nullptr;
};

}  // namespace medsum
