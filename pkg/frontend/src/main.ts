import { ApiClient } from "./api.js";
import { CanvasApp } from "./app.js";

const params = new URLSearchParams(window.location.search);
const base = params.get("api") ?? window.location.origin;
const sessionId = params.get("session") ?? undefined;

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}

const app = new CanvasApp(root, new ApiClient(base));
void app.init(sessionId);

declare global {
  interface Window {
    jokeasyApp: CanvasApp;
  }
}
window.jokeasyApp = app;
