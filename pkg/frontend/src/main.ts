import { ApiClient } from "./api.js";
import { mountDashboard } from "./ui.js";

const store = mountDashboard(document, new ApiClient(""));
void store.start();
