import { ApiClient } from "./api.js";
import { createApp } from "./app.js";
import { fixtureFetch } from "./fixtures.js";

const params = new URLSearchParams(window.location.search);
const baseUrl =
  params.get("api") ?? localStorage.getItem("xmodal.baseUrl") ?? "http://127.0.0.1:8000";
if (params.get("api")) {
  localStorage.setItem("xmodal.baseUrl", baseUrl);
}

const client = params.has("mock")
  ? new ApiClient("http://fixture.local", fixtureFetch)
  : new ApiClient(baseUrl);

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
createApp(root, client);
