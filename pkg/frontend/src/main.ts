/**
 * Browser entry point.
 *
 * The only configuration is the API base URL: an ?api= query parameter wins,
 * then a <meta name="api-base"> tag, and by default the page talks to its
 * own origin, which is right when the service itself mounts it at /ui.
 */

import { ReviewApp } from "./app";

function apiBase(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("api");
  if (fromQuery) return fromQuery;
  const meta = document.querySelector('meta[name="api-base"]');
  const fromMeta = meta?.getAttribute("content");
  if (fromMeta) return fromMeta;
  return "";
}

window.addEventListener("load", () => {
  const root = document.getElementById("app");
  if (!root) {
    throw new Error("missing #app container");
  }
  const app = new ReviewApp(root, { apiBase: apiBase() });
  void app.load();
  app.startPolling();
});
