import { ApiClient } from "./api.js";
import { Viewer } from "./viewer.js";

window.addEventListener("DOMContentLoaded", () => {
  const viewer = new Viewer(new ApiClient());
  void viewer.start();
});
