#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "ppsimrank/common.hpp"

#include <json.hpp>

namespace ppsr {

namespace msg {
inline constexpr const char* PublicKey = "PublicKey";
inline constexpr const char* EncGraph = "EncGraph";
inline constexpr const char* EncMaskList = "EncMaskList";
inline constexpr const char* RecryptRequest = "RecryptRequest";
inline constexpr const char* RecryptResponse = "RecryptResponse";
inline constexpr const char* MaskedScores = "MaskedScores";
inline constexpr const char* NoisyPlainScores = "NoisyPlainScores";
inline constexpr const char* MaskReveal = "MaskReveal";
inline constexpr const char* Abort = "Abort";
bool is_known_type(const std::string& type);
}  // namespace msg

struct ProtocolMessage {
  std::uint64_t seq = 0;
  std::string type;
  std::string from;
  std::string to;
  nlohmann::json body;
};

std::string serialize_message(const ProtocolMessage& m);
ProtocolMessage deserialize_message(const std::string& payload);

inline constexpr std::size_t kDefaultFrameCap = 64ull << 20;  // 64 MiB

// Received-message log for one endpoint, one JSON message per line in
// delivery order. The privacy checks scan these.
class Transcript {
 public:
  void append(const std::string& line) { lines_.push_back(line); }
  const std::vector<std::string>& lines() const { return lines_; }
  std::string text() const;
  void save(const std::string& path) const;

 private:
  std::vector<std::string> lines_;
};

struct TrafficCounters {
  std::map<std::string, std::uint64_t> sent_msgs, sent_bytes;  // keyed by peer
  std::map<std::string, std::uint64_t> recv_msgs, recv_bytes;
};

// One party's attachment to the network. Messages from a given sender are
// delivered in send order; recv blocks for the next message from any peer.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  void send(const std::string& to, const std::string& type, nlohmann::json body);
  ProtocolMessage recv();
  ProtocolMessage recv_expect(const std::string& expected_type);

  const std::string& party() const { return party_; }
  Transcript* transcript() { return transcript_ ? transcript_.get() : nullptr; }
  void enable_transcript() { transcript_ = std::make_unique<Transcript>(); }
  const TrafficCounters& traffic() const { return traffic_; }
  std::size_t frame_cap() const { return frame_cap_; }
  void set_frame_cap(std::size_t cap) { frame_cap_ = cap; }

 protected:
  explicit Endpoint(std::string party) : party_(std::move(party)) {}
  virtual void send_frame(const std::string& to, const std::string& payload) = 0;
  virtual std::string recv_frame() = 0;

  std::string party_;
  std::uint64_t next_seq_ = 0;
  std::size_t frame_cap_ = kDefaultFrameCap;
  std::unique_ptr<Transcript> transcript_;
  TrafficCounters traffic_;
};

// Shared-memory transport for tests and single-process runs.
class InProcNetwork {
 public:
  std::shared_ptr<Endpoint> endpoint(const std::string& party);
  void close_party(const std::string& party);  // later recv/send raises connection-lost

 private:
  friend class InProcEndpoint;
  struct Mailbox {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<std::string> queue;
    bool closed = false;
  };
  Mailbox& box(const std::string& party);
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Mailbox>> boxes_;
};

std::string frame_encode(const std::string& payload);

// Two-party TCP endpoints: length-prefixed JSON frames over one socket.
std::unique_ptr<Endpoint> tcp_listen_one(const std::string& party, std::uint16_t port, int timeout_ms = 30000);
std::unique_ptr<Endpoint> tcp_connect(const std::string& party, const std::string& host, std::uint16_t port,
                                      int timeout_ms = 30000);

inline constexpr std::uint16_t kDefaultPort = 7411;

}  // namespace ppsr
