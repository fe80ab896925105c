import { ApiClient } from "./api";
import { createApp } from "./app";
import "./style.css";

// Same-origin by default (the service can mount the built bundle itself);
// ?api=http://host:port points the client at a service running elsewhere.
const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? "";

createApp(document.getElementById("app")!, new ApiClient(base));
