import { Api } from "./api";
import { App } from "./app";
import "./styles.css";

// Same-origin API: the service mounts this bundle at "/", and the dev
// server proxies /api and /health to a locally running service.
const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");
new App(root, new Api(""));
