#include "ppsimrank/transport.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <fstream>

namespace ppsr {

namespace msg {
bool is_known_type(const std::string& type) {
  static const char* kTypes[] = {PublicKey,     EncGraph,         EncMaskList, RecryptRequest, RecryptResponse,
                                 MaskedScores,  NoisyPlainScores, MaskReveal,  Abort};
  for (const char* t : kTypes)
    if (type == t) return true;
  return false;
}
}  // namespace msg

std::string serialize_message(const ProtocolMessage& m) {
  nlohmann::json j{{"seq", m.seq}, {"type", m.type}, {"from", m.from}, {"to", m.to}, {"body", m.body}};
  return j.dump();
}

ProtocolMessage deserialize_message(const std::string& payload) {
  nlohmann::json j = nlohmann::json::parse(payload, nullptr, false);
  if (j.is_discarded()) fail(Errc::parse_error, "message payload is not valid JSON");
  ProtocolMessage m;
  try {
    m.seq = j.at("seq").get<std::uint64_t>();
    m.type = j.at("type").get<std::string>();
    m.from = j.at("from").get<std::string>();
    m.to = j.at("to").get<std::string>();
    m.body = j.at("body");
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse_error, std::string("malformed message: ") + e.what());
  }
  if (!msg::is_known_type(m.type)) fail(Errc::protocol_violation, "unknown message type '" + m.type + "'");
  return m;
}

std::string Transcript::text() const {
  std::string out;
  for (const auto& l : lines_) {
    out += l;
    out += '\n';
  }
  return out;
}

void Transcript::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(Errc::io_error, "cannot write transcript '" + path + "'");
  out << text();
}

void Endpoint::send(const std::string& to, const std::string& type, nlohmann::json body) {
  ProtocolMessage m;
  m.seq = next_seq_++;
  m.type = type;
  m.from = party_;
  m.to = to;
  m.body = std::move(body);
  std::string payload = serialize_message(m);
  if (payload.size() > frame_cap_)
    fail(Errc::frame_too_large, "frame of " + std::to_string(payload.size()) + " bytes exceeds cap");
  traffic_.sent_msgs[to]++;
  traffic_.sent_bytes[to] += payload.size() + 4;
  send_frame(to, payload);
}

ProtocolMessage Endpoint::recv() {
  std::string payload = recv_frame();
  if (payload.size() > frame_cap_) fail(Errc::frame_too_large, "incoming frame exceeds cap");
  ProtocolMessage m = deserialize_message(payload);
  traffic_.recv_msgs[m.from]++;
  traffic_.recv_bytes[m.from] += payload.size() + 4;
  if (transcript_) transcript_->append(payload);
  return m;
}

ProtocolMessage Endpoint::recv_expect(const std::string& expected_type) {
  ProtocolMessage m = recv();
  if (m.type == msg::Abort && expected_type != msg::Abort)
    fail(Errc::aborted, "peer " + m.from + " aborted: " + m.body.value("reason", std::string("?")));
  if (m.type != expected_type)
    fail(Errc::protocol_violation, "expected " + expected_type + " but received " + m.type);
  return m;
}

namespace {

class InProcEndpoint final : public Endpoint {
 public:
  InProcEndpoint(InProcNetwork& net, std::string party) : Endpoint(std::move(party)), net_(net) {}

 protected:
  void send_frame(const std::string& to, const std::string& payload) override;
  std::string recv_frame() override;

 private:
  InProcNetwork& net_;
};

}  // namespace

InProcNetwork::Mailbox& InProcNetwork::box(const std::string& party) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& slot = boxes_[party];
  if (!slot) slot = std::make_shared<Mailbox>();
  return *slot;
}

std::shared_ptr<Endpoint> InProcNetwork::endpoint(const std::string& party) {
  box(party);  // ensure mailbox exists
  return std::make_shared<InProcEndpoint>(*this, party);
}

void InProcNetwork::close_party(const std::string& party) {
  Mailbox& b = box(party);
  std::lock_guard<std::mutex> lock(b.mu);
  b.closed = true;
  b.cv.notify_all();
}

namespace {

void inproc_push(InProcNetwork::Mailbox& b, const std::string& payload) {
  std::lock_guard<std::mutex> lock(b.mu);
  if (b.closed) fail(Errc::connection_lost, "peer mailbox is closed");
  b.queue.push_back(payload);
  b.cv.notify_one();
}

std::string inproc_pop(InProcNetwork::Mailbox& b) {
  std::unique_lock<std::mutex> lock(b.mu);
  b.cv.wait(lock, [&] { return b.closed || !b.queue.empty(); });
  if (b.queue.empty()) fail(Errc::connection_lost, "mailbox closed");
  std::string payload = std::move(b.queue.front());
  b.queue.pop_front();
  return payload;
}

}  // namespace

void InProcEndpoint::send_frame(const std::string& to, const std::string& payload) {
  inproc_push(net_.box(to), payload);
}

std::string InProcEndpoint::recv_frame() { return inproc_pop(net_.box(party_)); }

std::string frame_encode(const std::string& payload) {
  std::string out;
  out.resize(4);
  std::uint32_t len = htonl(static_cast<std::uint32_t>(payload.size()));
  std::memcpy(out.data(), &len, 4);
  out += payload;
  return out;
}

namespace {

class TcpEndpoint final : public Endpoint {
 public:
  TcpEndpoint(std::string party, int fd, int timeout_ms) : Endpoint(std::move(party)), fd_(fd) {
    timeval tv{timeout_ms / 1000, (timeout_ms % 1000) * 1000};
    setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    setsockopt(fd_, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
  }
  ~TcpEndpoint() override {
    if (fd_ >= 0) ::close(fd_);
  }

 protected:
  void send_frame(const std::string&, const std::string& payload) override {
    std::string frame = frame_encode(payload);
    write_all(frame.data(), frame.size());
  }

  std::string recv_frame() override {
    unsigned char hdr[4];
    read_all(hdr, 4);
    std::uint32_t len;
    std::memcpy(&len, hdr, 4);
    len = ntohl(len);
    if (len > frame_cap_) fail(Errc::frame_too_large, "incoming frame of " + std::to_string(len) + " bytes");
    std::string payload(len, '\0');
    if (len) read_all(payload.data(), len);
    return payload;
  }

 private:
  void write_all(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    while (n > 0) {
      ssize_t w = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (w <= 0) fail(Errc::connection_lost, "socket write failed");
      p += w;
      n -= static_cast<std::size_t>(w);
    }
  }
  void read_all(void* data, std::size_t n) {
    char* p = static_cast<char*>(data);
    while (n > 0) {
      ssize_t r = ::recv(fd_, p, n, 0);
      if (r <= 0) fail(Errc::connection_lost, "socket read failed or peer closed");
      p += r;
      n -= static_cast<std::size_t>(r);
    }
  }
  int fd_;
};

}  // namespace

std::unique_ptr<Endpoint> tcp_listen_one(const std::string& party, std::uint16_t port, int timeout_ms) {
  int lfd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (lfd < 0) fail(Errc::connection_lost, "cannot create listening socket");
  int opt = 1;
  setsockopt(lfd, SOL_SOCKET, SO_REUSEADDR, &opt, sizeof(opt));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(port);
  if (::bind(lfd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(lfd, 1) != 0) {
    ::close(lfd);
    fail(Errc::connection_lost, "cannot bind/listen on port " + std::to_string(port));
  }
  int fd = ::accept(lfd, nullptr, nullptr);
  ::close(lfd);
  if (fd < 0) fail(Errc::connection_lost, "accept failed");
  return std::make_unique<TcpEndpoint>(party, fd, timeout_ms);
}

std::unique_ptr<Endpoint> tcp_connect(const std::string& party, const std::string& host, std::uint16_t port,
                                      int timeout_ms) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) fail(Errc::connection_lost, "cannot create socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    fail(Errc::connection_lost, "bad host address '" + host + "'");
  }
  // the peer may not be listening yet; retry briefly
  int waited = 0;
  while (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd);
    if (waited >= timeout_ms) fail(Errc::connection_lost, "cannot connect to " + host);
    ::usleep(50 * 1000);
    waited += 50;
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) fail(Errc::connection_lost, "cannot create socket");
  }
  return std::make_unique<TcpEndpoint>(party, fd, timeout_ms);
}

}  // namespace ppsr
