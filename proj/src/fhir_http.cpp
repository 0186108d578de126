#include "smartalert/errors.hpp"
#include "smartalert/fhir.hpp"

#include <httplib.h>

#include <algorithm>
#include <mutex>

namespace smartalert {

namespace {

bool known_type(const std::string& type) {
    return std::find(fhir::kResourceTypes.begin(), fhir::kResourceTypes.end(), type) != fhir::kResourceTypes.end();
}

void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/fhir+json");
}

Json operation_outcome(const std::string& message) {
    return Json{{"resourceType", "OperationOutcome"},
                {"issue", Json::array({{{"severity", "error"}, {"diagnostics", message}}})}};
}

Json id_only(const Json& resource) {
    return Json{{"resourceType", resource.at("resourceType")}, {"id", resource.at("id")}};
}

} // namespace

// ---------------------------------------------------------------------------
// FixtureServer

struct FixtureServer::Impl {
    FhirStore& store;
    std::chrono::milliseconds latency;
    httplib::Server server;
    std::thread thread;
    std::string host;
    int port = 0;

    Impl(FhirStore& s, std::chrono::milliseconds l) : store(s), latency(l) {}
};

FixtureServer::FixtureServer(FhirStore& store, std::chrono::milliseconds latency)
    : impl_(std::make_unique<Impl>(store, latency)) {
    auto& srv = impl_->server;
    Impl* impl = impl_.get();

    srv.set_pre_routing_handler([this, impl](const httplib::Request&, httplib::Response&) {
        ++requests_;
        if (impl->latency.count() > 0) {
            std::this_thread::sleep_for(impl->latency);
        }
        return httplib::Server::HandlerResponse::Unhandled;
    });

    srv.Get("/fhir/metadata", [impl](const httplib::Request&, httplib::Response& res) {
        Json kinds = Json::array();
        for (auto t : fhir::kResourceTypes) kinds.push_back(Json{{"type", t}});
        send_json(res, 200,
                  Json{{"resourceType", "CapabilityStatement"},
                       {"fhirVersion", "4.0.1"},
                       {"format", Json::array({"json"})},
                       {"rest", Json::array({{{"mode", "server"}, {"resource", kinds}}})},
                       {"resourceCount", impl->store.size()}});
    });

    srv.Get(R"(/fhir/([A-Za-z]+)/([^/]+))", [impl](const httplib::Request& req, httplib::Response& res) {
        const std::string type = req.matches[1];
        const std::string id = req.matches[2];
        if (!known_type(type)) {
            send_json(res, 404, operation_outcome("unsupported resource type " + type));
            return;
        }
        auto r = impl->store.get(type, id);
        if (!r) {
            send_json(res, 404, operation_outcome(type + "/" + id + " not found"));
            return;
        }
        send_json(res, 200, *r);
    });

    srv.Get(R"(/fhir/([A-Za-z]+))", [impl](const httplib::Request& req, httplib::Response& res) {
        const std::string type = req.matches[1];
        if (!known_type(type)) {
            send_json(res, 404, operation_outcome("unsupported resource type " + type));
            return;
        }
        const bool ids_only = req.get_param_value("_elements") == "id";
        std::vector<Json> found;
        if (req.has_param("encounter")) {
            found = impl->store.by_encounter(type, req.get_param_value("encounter"));
        } else if (type == "Encounter" || type == "Patient") {
            found = impl->store.of_type(type);
        } else {
            send_json(res, 400, operation_outcome("search requires an encounter parameter"));
            return;
        }
        if (ids_only) {
            for (auto& r : found) r = id_only(r);
        }
        send_json(res, 200, fhir::make_bundle(found, "searchset"));
    });

    auto write = [impl](const httplib::Request& req, httplib::Response& res, const std::string& type,
                        const std::string* id) {
        if (!known_type(type)) {
            send_json(res, 404, operation_outcome("unsupported resource type " + type));
            return;
        }
        Json body;
        try {
            body = Json::parse(req.body);
        } catch (const Json::parse_error& e) {
            send_json(res, 400, operation_outcome(std::string("invalid JSON: ") + e.what()));
            return;
        }
        if (body.value("resourceType", "") != type || (id != nullptr && body.value("id", "") != *id)) {
            send_json(res, 400, operation_outcome("body does not match request path"));
            return;
        }
        const bool existed = body.contains("id") && body["id"].is_string() &&
                             impl->store.get(type, body["id"].get<std::string>()).has_value();
        try {
            send_json(res, existed ? 200 : 201, impl->store.put(body));
        } catch (const ParseError& e) {
            send_json(res, 422, operation_outcome(e.what()));
        }
    };

    srv.Put(R"(/fhir/([A-Za-z]+)/([^/]+))", [write](const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[2];
        write(req, res, req.matches[1], &id);
    });
    srv.Post(R"(/fhir/([A-Za-z]+))", [write](const httplib::Request& req, httplib::Response& res) {
        write(req, res, req.matches[1], nullptr);
    });
}

FixtureServer::~FixtureServer() { stop(); }

int FixtureServer::start(const std::string& host, int port) {
    auto& srv = impl_->server;
    int bound = port;
    if (port == 0) {
        bound = srv.bind_to_any_port(host);
    } else if (!srv.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) {
        throw TransportError("cannot bind fixture server to " + host + ":" + std::to_string(port));
    }
    impl_->host = host;
    impl_->port = bound;
    impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
    srv.wait_until_ready();
    return bound;
}

void FixtureServer::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->thread.joinable()) impl_->thread.join();
}

std::string FixtureServer::base_url() const {
    return "http://" + impl_->host + ":" + std::to_string(impl_->port);
}

// ---------------------------------------------------------------------------
// HttpFhirClient

struct HttpFhirClient::Impl {
    std::mutex mu;
    httplib::Client client;
    explicit Impl(const std::string& url) : client(url) {
        client.set_connection_timeout(5, 0);
        client.set_read_timeout(600, 0);
        client.set_keep_alive(true);
    }
};

HttpFhirClient::HttpFhirClient(std::string base_url, LabCodeMap codes, FetchMode mode)
    : FhirSource(std::move(codes)), impl_(std::make_unique<Impl>(base_url)), mode_(mode) {}

HttpFhirClient::~HttpFhirClient() = default;

Json HttpFhirClient::get_json(const std::string& path) {
    std::lock_guard lock(impl_->mu);
    auto res = impl_->client.Get(path);
    if (!res) {
        throw TransportError("FHIR endpoint unreachable (" + httplib::to_string(res.error()) + ") for " + path);
    }
    if (res->status == 404) {
        throw NotFound(path + " not found");
    }
    if (res->status >= 500) {
        throw TransportError("FHIR endpoint returned " + std::to_string(res->status) + " for " + path);
    }
    if (res->status != 200) {
        throw ParseError("FHIR endpoint rejected " + path + " with " + std::to_string(res->status));
    }
    try {
        return Json::parse(res->body);
    } catch (const Json::parse_error& e) {
        throw ParseError("malformed JSON from " + path + ": " + e.what());
    }
}

Json HttpFhirClient::read(std::string_view type, const std::string& id) {
    return get_json("/fhir/" + std::string(type) + "/" + httplib::detail::encode_url(id));
}

std::vector<Json> HttpFhirClient::search_encounter(std::string_view type, const std::string& encounter_id) {
    std::string path = "/fhir/" + std::string(type) + "?encounter=" + httplib::detail::encode_url(encounter_id);
    if (mode_ == FetchMode::per_resource) path += "&_elements=id";
    const Json bundle = get_json(path);
    std::vector<Json> out;
    for (const auto& entry : bundle.value("entry", Json::array())) {
        const Json& r = entry.at("resource");
        if (mode_ == FetchMode::per_resource) {
            out.push_back(read(type, r.at("id").get<std::string>()));
        } else {
            out.push_back(r);
        }
    }
    return out;
}

std::vector<Json> HttpFhirClient::all_encounters() {
    const Json bundle = get_json("/fhir/Encounter");
    std::vector<Json> out;
    for (const auto& entry : bundle.value("entry", Json::array())) out.push_back(entry.at("resource"));
    return out;
}

Json HttpFhirClient::put(const Json& resource) {
    const auto type = resource.value("resourceType", "");
    const auto id = resource.value("id", "");
    const std::string path = "/fhir/" + type + "/" + httplib::detail::encode_url(id);
    std::lock_guard lock(impl_->mu);
    auto res = impl_->client.Put(path, resource.dump(), "application/fhir+json");
    if (!res) {
        throw TransportError("FHIR endpoint unreachable (" + httplib::to_string(res.error()) + ") for PUT " + path);
    }
    if (res->status >= 500) {
        throw TransportError("FHIR endpoint returned " + std::to_string(res->status) + " for PUT " + path);
    }
    if (res->status != 200 && res->status != 201) {
        throw ParseError("FHIR endpoint rejected PUT " + path + " with " + std::to_string(res->status));
    }
    return Json::parse(res->body);
}

} // namespace smartalert
