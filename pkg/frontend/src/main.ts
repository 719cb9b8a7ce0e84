// Entry point: configuration comes from the query string, with the page
// origin as the default API base URL.
//
//   ?session=<id>                        resume an existing session
//   ?annotator=<name>&emotion=<emotion>  create-or-resume by identity
//   &base=<url>                          override the API base URL
//   &seed=<int>                          shuffle seed for new sessions

import { boot } from "./dom.js";

const params = new URLSearchParams(window.location.search);

boot({
  baseUrl: params.get("base") ?? window.location.origin,
  sessionId: params.get("session") ?? undefined,
  annotatorId: params.get("annotator") ?? undefined,
  emotion: params.get("emotion") ?? undefined,
  seed: params.get("seed") ? Number(params.get("seed")) : undefined,
  instruction: params.get("instruction") ?? undefined,
}).catch((error) => {
  const status = document.getElementById("status");
  if (status) status.textContent = String(error);
});
